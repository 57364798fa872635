//! Frequency-domain learning stage: token embedding, a spectral pass along
//! the channel axis, the same recipe (separate weights) along the temporal
//! axis, then per-channel flatten + fully connected projection.
//!
//! Per-position work is batched into whole-tensor GEMMs: a (C, L, d) tensor
//! is held as (C, L·d) for the channel transform and regrouped to (L, C·d)
//! for the temporal transform; the complex MLP always acts on the trailing
//! d axis.

use super::params::FdlParams;
use super::spectral::{complex_mlp_bwd, complex_mlp_fwd, ComplexMlpCache, SpectralPlan};
use super::{Activation, ModelError};
use ndarray::{Array2, Axis};

/// (A, B·d) → (B, A·d) regrouping of a logically (A, B, d) tensor.
fn regroup(x: &Array2<f64>, a_dim: usize, b_dim: usize, d: usize) -> Array2<f64> {
    debug_assert_eq!(x.dim(), (a_dim, b_dim * d));
    let mut out = Array2::zeros((b_dim, a_dim * d));
    for a in 0..a_dim {
        for b in 0..b_dim {
            for k in 0..d {
                out[[b, a * d + k]] = x[[a, b * d + k]];
            }
        }
    }
    out
}

fn rows_to_d(x: Array2<f64>, d: usize) -> Array2<f64> {
    let rows = x.nrows() * x.ncols() / d;
    x.into_shape_with_order((rows, d)).expect("standard layout")
}

fn d_to_rows(x: Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    x.into_shape_with_order((rows, cols)).expect("standard layout")
}

pub(crate) struct FdlCache {
    x_res: Array2<f64>,
    ch_mlp: Vec<ComplexMlpCache>,
    t_mlp: Vec<ComplexMlpCache>,
    fc_in: Array2<f64>,
    fc_pre: Array2<f64>,
}

/// One spectral pass: forward transform along the leading axis, complex MLP
/// on the d axis, inverse transform. Returns the output and MLP caches.
fn spectral_pass(
    plan: &SpectralPlan,
    x: &Array2<f64>,
    layers: &[super::params::ComplexLinear],
    act: Activation,
    d: usize,
) -> Result<(Array2<f64>, Vec<ComplexMlpCache>), ModelError> {
    let positions = x.ncols() / d;
    let spec = plan.forward(x);
    let re = rows_to_d(spec.re, d);
    let im = rows_to_d(spec.im, d);
    let (re, im, caches) = complex_mlp_fwd(&re, &im, layers, act)?;
    let spec_out = super::spectral::HalfSpectrum {
        re: d_to_rows(re, plan.bins, positions * d),
        im: d_to_rows(im, plan.bins, positions * d),
        n_full: plan.n,
    };
    Ok((plan.inverse(&spec_out), caches))
}

fn spectral_pass_bwd(
    plan: &SpectralPlan,
    layers: &[super::params::ComplexLinear],
    caches: &[ComplexMlpCache],
    layer_grads: &mut [super::params::ComplexLinear],
    d_out: &Array2<f64>,
    act: Activation,
    d: usize,
) -> Array2<f64> {
    let positions = d_out.ncols() / d;
    let (d_re, d_im) = plan.inverse_backward(d_out);
    let d_re = rows_to_d(d_re, d);
    let d_im = rows_to_d(d_im, d);
    let (grads, d_in_re, d_in_im) = complex_mlp_bwd(layers, caches, &d_re, &d_im, act);
    for (g, acc) in grads.into_iter().zip(layer_grads.iter_mut()) {
        acc.w_re += &g.w_re;
        acc.w_im += &g.w_im;
        acc.b_re += &g.b_re;
        acc.b_im += &g.b_im;
    }
    let d_in_re = d_to_rows(d_in_re, plan.bins, positions * d);
    let d_in_im = d_to_rows(d_in_im, plan.bins, positions * d);
    plan.forward_backward(&d_in_re, &d_in_im)
}

/// Forward through the whole frequency stage.
///
/// `plan_ch` transforms the channel axis (length C_res), `plan_t` the
/// temporal axis (length L_res). Output is (C_res, L_fre).
pub(crate) fn fdl_fwd(
    params: &FdlParams,
    plan_ch: &SpectralPlan,
    plan_t: &SpectralPlan,
    x_res: &Array2<f64>,
    act: Activation,
) -> Result<(Array2<f64>, FdlCache), ModelError> {
    let (c, l) = x_res.dim();
    let d = params.token_w.len();
    // token embedding: emb[c, l*d + k] = x_res[c, l] * w[k]
    let mut emb = Array2::zeros((c, l * d));
    for ci in 0..c {
        for li in 0..l {
            let v = x_res[[ci, li]];
            for k in 0..d {
                emb[[ci, li * d + k]] = v * params.token_w[k];
            }
        }
    }
    let (z_ch, ch_mlp) = spectral_pass(plan_ch, &emb, &params.channel_mlp, act, d)?;
    let z_t_in = regroup(&z_ch, c, l, d);
    let (z_t, t_mlp) = spectral_pass(plan_t, &z_t_in, &params.temporal_mlp, act, d)?;
    let fc_in = regroup(&z_t, l, c, d);
    let mut fc_pre = fc_in.dot(&params.fc.w.t());
    fc_pre += &params.fc.b.view().insert_axis(Axis(0));
    let x_fre = fc_pre.mapv(|v| act.apply(v));
    if !x_fre.iter().all(|v| v.is_finite()) {
        return Err(ModelError::Numeric {
            location: "fdl fully connected output".into(),
            message: "non-finite value".into(),
        });
    }
    Ok((
        x_fre,
        FdlCache {
            x_res: x_res.clone(),
            ch_mlp,
            t_mlp,
            fc_in,
            fc_pre,
        },
    ))
}

/// Backward through the frequency stage; fills `grads` and returns the
/// gradient w.r.t. the backbone features.
pub(crate) fn fdl_bwd(
    params: &FdlParams,
    grads: &mut FdlParams,
    plan_ch: &SpectralPlan,
    plan_t: &SpectralPlan,
    cache: &FdlCache,
    d_x_fre: &Array2<f64>,
    act: Activation,
) -> Array2<f64> {
    let (c, l) = cache.x_res.dim();
    let d = params.token_w.len();
    let d_fc_pre = d_x_fre * &cache.fc_pre.mapv(|v| act.grad_from_pre(v));
    grads.fc.w += &d_fc_pre.t().dot(&cache.fc_in);
    grads.fc.b += &d_fc_pre.sum_axis(Axis(0));
    let d_fc_in = d_fc_pre.dot(&params.fc.w);
    let d_z_t = regroup(&d_fc_in, c, l, d);
    let d_z_t_in = spectral_pass_bwd(
        plan_t,
        &params.temporal_mlp,
        &cache.t_mlp,
        &mut grads.temporal_mlp,
        &d_z_t,
        act,
        d,
    );
    let d_z_ch = regroup(&d_z_t_in, l, c, d);
    let d_emb = spectral_pass_bwd(
        plan_ch,
        &params.channel_mlp,
        &cache.ch_mlp,
        &mut grads.channel_mlp,
        &d_z_ch,
        act,
        d,
    );
    // token embedding backward
    let mut d_x_res = Array2::zeros((c, l));
    for ci in 0..c {
        for li in 0..l {
            let mut acc = 0.0;
            for k in 0..d {
                let g = d_emb[[ci, li * d + k]];
                acc += g * params.token_w[k];
                grads.token_w[k] += g * cache.x_res[[ci, li]];
            }
            d_x_res[[ci, li]] = acc;
        }
    }
    d_x_res
}
