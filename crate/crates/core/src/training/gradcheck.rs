//! Central-finite-difference verification of the hand-derived backward
//! passes, block by block and for the full model.
//!
//! Each block gets a self-contained double-precision scenario: fixed random
//! input, fixed random target, a scalar loss, and the block's analytic
//! gradient. Up to `max_samples` parameters are perturbed by ±eps and the
//! centered difference is compared against the analytic value.

use super::TrainError;
use crate::model::params::FtinParams;
use crate::model::spectral::{complex_mlp_bwd, complex_mlp_fwd};
use crate::model::{
    backbone_bwd, backbone_fwd, fdl_bwd, fdl_fwd, head_bwd, head_fwd, slstm_bwd, slstm_fwd,
    Activation, BackboneConfig, FtinConfig, FtinModel, ModelError, SlstmConfig, SpectralPlan,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which part of the model the gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckBlock {
    /// Regression head with identity activation (exactly linear).
    Head,
    /// Complex MLP stack with identity activation.
    ComplexMlp,
    /// Residual backbone (rectifier nonlinearities).
    Backbone,
    /// Frequency stage end to end (tanh activation keeps it smooth).
    Fdl,
    /// Scalar-LSTM stage, loss over the full hidden sequence.
    Slstm,
    /// Full model with rectifier activations.
    Full,
}

impl CheckBlock {
    pub const ALL: [CheckBlock; 6] = [
        CheckBlock::Head,
        CheckBlock::ComplexMlp,
        CheckBlock::Backbone,
        CheckBlock::Fdl,
        CheckBlock::Slstm,
        CheckBlock::Full,
    ];

    fn tensor_filter(self) -> &'static str {
        match self {
            CheckBlock::Head => "head.",
            CheckBlock::ComplexMlp => "fdl.channel_mlp",
            CheckBlock::Backbone => "backbone.",
            CheckBlock::Fdl => "fdl.",
            CheckBlock::Slstm => "tdl.",
            CheckBlock::Full => "",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_checked: usize,
}

fn scenario_config(block: CheckBlock) -> FtinConfig {
    let activation = match block {
        CheckBlock::Head | CheckBlock::ComplexMlp => Activation::Identity,
        CheckBlock::Fdl | CheckBlock::Slstm => Activation::Tanh,
        CheckBlock::Backbone | CheckBlock::Full => Activation::Relu,
    };
    FtinConfig {
        window_len: 24,
        in_channels: 6,
        backbone: BackboneConfig {
            stage_channels: vec![4, 8],
            stage_strides: vec![1, 2],
            blocks_per_stage: 1,
            kernel_size: 3,
        },
        embed_dim: 4,
        n_freq_layers: 2,
        fdl_enabled: true,
        tdl_enabled: true,
        freq_out_len: 8,
        slstm: SlstmConfig {
            hidden_size: 6,
            layers: 1,
        },
        head: vec![8, 6, 2],
        activation,
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-scale..scale))
}

/// Mean squared deviation of `out` from `target`, and its gradient.
fn matrix_loss(out: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let numel = out.len() as f64;
    let diff = out - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / numel;
    (loss, diff * (2.0 / numel))
}

struct Scenario {
    params: FtinParams,
    analytic: FtinParams,
    loss: Box<dyn Fn(&FtinParams) -> Result<f64, ModelError>>,
}

fn build_scenario(block: CheckBlock, seed: u64) -> Result<Scenario, TrainError> {
    let config = scenario_config(block);
    let model = FtinModel::new(config.clone())?;
    let params = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let act = config.activation;
    let mut analytic = params.zeros_like();

    let loss: Box<dyn Fn(&FtinParams) -> Result<f64, ModelError>> = match block {
        CheckBlock::Head => {
            let input = rand_vec(&mut rng, config.head_input_dim(), 1.0);
            let target = [0.35, -0.6];
            let (v, cache) = head_fwd(&params.head, &input, act);
            head_bwd(
                &params.head,
                &mut analytic.head,
                &cache,
                [v[0] - target[0], v[1] - target[1]],
                act,
            );
            Box::new(move |p| {
                let (v, _) = head_fwd(&p.head, &input, act);
                Ok(((v[0] - target[0]).powi(2) + (v[1] - target[1]).powi(2)) / 2.0)
            })
        }
        CheckBlock::ComplexMlp => {
            let d = config.embed_dim;
            let rows = 5;
            let in_re = rand_mat(&mut rng, (rows, d), 1.0);
            let in_im = rand_mat(&mut rng, (rows, d), 1.0);
            let t_re = rand_mat(&mut rng, (rows, d), 1.0);
            let t_im = rand_mat(&mut rng, (rows, d), 1.0);
            let (re, im, caches) = complex_mlp_fwd(&in_re, &in_im, &params.fdl.channel_mlp, act)?;
            let numel = (2 * rows * d) as f64;
            let d_re = (&re - &t_re) * (2.0 / numel);
            let d_im = (&im - &t_im) * (2.0 / numel);
            let (layer_grads, _, _) =
                complex_mlp_bwd(&params.fdl.channel_mlp, &caches, &d_re, &d_im, act);
            for (g, acc) in layer_grads.into_iter().zip(&mut analytic.fdl.channel_mlp) {
                acc.w_re += &g.w_re;
                acc.w_im += &g.w_im;
                acc.b_re += &g.b_re;
                acc.b_im += &g.b_im;
            }
            Box::new(move |p| {
                let (re, im, _) = complex_mlp_fwd(&in_re, &in_im, &p.fdl.channel_mlp, act)?;
                let s: f64 = re
                    .iter()
                    .zip(t_re.iter())
                    .chain(im.iter().zip(t_im.iter()))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                Ok(s / numel)
            })
        }
        CheckBlock::Backbone => {
            let x = rand_mat(&mut rng, (config.in_channels, config.window_len), 1.0);
            let target = rand_mat(&mut rng, (config.res_channels(), config.res_len()), 1.0);
            let (out, cache) = backbone_fwd(&params.backbone, &x);
            let (_, d_out) = matrix_loss(&out, &target);
            backbone_bwd(&params.backbone, &mut analytic.backbone, &cache, &d_out);
            Box::new(move |p| {
                let (out, _) = backbone_fwd(&p.backbone, &x);
                Ok(matrix_loss(&out, &target).0)
            })
        }
        CheckBlock::Fdl => {
            let x_res = rand_mat(&mut rng, (config.res_channels(), config.res_len()), 1.0);
            let target = rand_mat(&mut rng, (config.res_channels(), config.freq_out_len), 0.5);
            let plan_ch = SpectralPlan::new(config.res_channels());
            let plan_t = SpectralPlan::new(config.res_len());
            let (out, cache) = fdl_fwd(&params.fdl, &plan_ch, &plan_t, &x_res, act)?;
            let (_, d_out) = matrix_loss(&out, &target);
            fdl_bwd(
                &params.fdl,
                &mut analytic.fdl,
                &plan_ch,
                &plan_t,
                &cache,
                &d_out,
                act,
            );
            Box::new(move |p| {
                let (out, _) = fdl_fwd(&p.fdl, &plan_ch, &plan_t, &x_res, act)?;
                Ok(matrix_loss(&out, &target).0)
            })
        }
        CheckBlock::Slstm => {
            let t_len = 8;
            let x = rand_mat(&mut rng, (config.res_channels(), t_len), 1.0);
            let target = rand_mat(&mut rng, (config.slstm.hidden_size, t_len), 0.5);
            let (hseq, _, cache) = slstm_fwd(&params.slstm, &x)?;
            let (_, d_hseq) = matrix_loss(&hseq, &target);
            let d_hlast = Array1::zeros(config.slstm.hidden_size);
            slstm_bwd(&params.slstm, &mut analytic.slstm, &cache, &d_hseq, &d_hlast);
            Box::new(move |p| {
                let (hseq, _, _) = slstm_fwd(&p.slstm, &x)?;
                Ok(matrix_loss(&hseq, &target).0)
            })
        }
        CheckBlock::Full => {
            let x = rand_mat(&mut rng, (config.in_channels, config.window_len), 1.0);
            let target = [0.3, -0.4];
            let (v, cache) = model.forward_cached(&params, &x)?;
            model.backward(
                &params,
                &cache,
                [v[0] - target[0], v[1] - target[1]],
                &mut analytic,
            );
            let model = model.clone();
            Box::new(move |p| {
                let v = model.forward(p, &x)?;
                Ok(((v[0] - target[0]).powi(2) + (v[1] - target[1]).powi(2)) / 2.0)
            })
        }
    };
    Ok(Scenario {
        params,
        analytic,
        loss,
    })
}

/// Runs the finite-difference comparison for one block.
///
/// Per sampled parameter the relative error is
/// `|analytic − numeric| / (|analytic| + |numeric|)`, with values treated
/// as matching when both magnitudes are below 1e-6 (the finite-difference
/// noise floor).
pub fn grad_check(
    block: CheckBlock,
    seed: u64,
    eps: f64,
    max_samples: usize,
) -> Result<GradCheckReport, TrainError> {
    let scenario = build_scenario(block, seed)?;
    let filter = block.tensor_filter();
    let candidates: Vec<(usize, usize)> = scenario
        .params
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.name.starts_with(filter))
        .map(|(i, t)| (i, t.data.len()))
        .collect();
    let total: usize = candidates.iter().map(|(_, l)| l).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < max_samples.min(total) {
        picked.insert(rng.random_range(0..total));
    }

    let analytic_slices: Vec<&[f64]> = scenario
        .analytic
        .tensors()
        .iter()
        .enumerate()
        .filter(|(i, _)| candidates.iter().any(|(ci, _)| ci == i))
        .map(|(_, t)| t.data)
        .collect();

    let mut max_rel = 0.0f64;
    for global in picked.iter() {
        let mut rest = *global;
        let mut slot = 0;
        while rest >= candidates[slot].1 {
            rest -= candidates[slot].1;
            slot += 1;
        }
        let (tensor_idx, _) = candidates[slot];
        let analytic = analytic_slices[slot][rest];

        let mut plus = scenario.params.clone();
        plus.tensors_mut()[tensor_idx].1[rest] += eps;
        let mut minus = scenario.params.clone();
        minus.tensors_mut()[tensor_idx].1[rest] -= eps;
        let numeric = ((scenario.loss)(&plus)? - (scenario.loss)(&minus)?) / (2.0 * eps);

        let denom = analytic.abs() + numeric.abs();
        let rel = if denom < 1e-6 {
            0.0
        } else {
            (analytic - numeric).abs() / denom
        };
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        n_checked: picked.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_head_gradients_are_exact() {
        let report = grad_check(CheckBlock::Head, 20250801, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    #[test]
    fn complex_mlp_identity_gradients() {
        let report = grad_check(CheckBlock::ComplexMlp, 20250802, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn backbone_gradients() {
        let report = grad_check(CheckBlock::Backbone, 20250803, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn fdl_gradients() {
        let report = grad_check(CheckBlock::Fdl, 20250804, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn slstm_gradients() {
        let report = grad_check(CheckBlock::Slstm, 20250805, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn full_model_gradients() {
        let report = grad_check(CheckBlock::Full, 20250806, 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }
}
