//! The velocity-regression network: 1-D residual backbone, frequency-domain
//! learning, scalar-LSTM time-domain learning, and a three-layer regression
//! head, with independent toggles for the frequency and time stages.
//!
//! The forward pass is a pure function of (params, input); training-time
//! backward passes are hand-derived and validated against central finite
//! differences by the training module's gradient harness.

mod backbone;
mod checkpoint;
mod fdl;
pub mod params;
pub mod spectral;
mod slstm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{FtinParams, NamedTensor};
pub use spectral::{
    complex_mlp, dft_half, idft_half, idft_half_checked, HalfSpectrum, SpectralPlan,
    IMAG_RESIDUE_TOL,
};

pub(crate) use backbone::{backbone_bwd, backbone_fwd};
pub(crate) use fdl::{fdl_bwd, fdl_fwd};
pub(crate) use slstm::{slstm_bwd, slstm_fwd};

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error at {location}: {message}")]
    Numeric { location: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Elementwise nonlinearity used by the frequency stage and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated from the pre-activation value.
    #[inline]
    pub fn grad_from_pre(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Backbone architecture: per-stage output channels and strides, a fixed
/// number of residual blocks per stage, and one kernel size throughout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub blocks_per_stage: usize,
    pub kernel_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlstmConfig {
    pub hidden_size: usize,
    pub layers: usize,
}

/// Full architecture description. `fdl_enabled`/`tdl_enabled` select the
/// four ablation variants: both off routes backbone → head directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtinConfig {
    pub window_len: usize,
    pub in_channels: usize,
    pub backbone: BackboneConfig,
    pub embed_dim: usize,
    pub n_freq_layers: usize,
    pub fdl_enabled: bool,
    pub tdl_enabled: bool,
    pub freq_out_len: usize,
    pub slstm: SlstmConfig,
    pub head: Vec<usize>,
    pub activation: Activation,
}

impl FtinConfig {
    /// Paper-scale default: 6×200 windows through stages (64,128,192,256).
    pub fn default_paper() -> Self {
        Self {
            window_len: 200,
            in_channels: 6,
            backbone: BackboneConfig {
                stage_channels: vec![64, 128, 192, 256],
                stage_strides: vec![1, 2, 2, 2],
                blocks_per_stage: 2,
                kernel_size: 3,
            },
            embed_dim: 32,
            n_freq_layers: 2,
            fdl_enabled: true,
            tdl_enabled: true,
            freq_out_len: 64,
            slstm: SlstmConfig {
                hidden_size: 128,
                layers: 1,
            },
            head: vec![128, 64, 2],
            activation: Activation::Relu,
        }
    }

    /// Compact configuration sized for CPU-only experiments.
    pub fn default_desk() -> Self {
        Self {
            window_len: 100,
            in_channels: 6,
            backbone: BackboneConfig {
                stage_channels: vec![8, 16, 16, 16],
                stage_strides: vec![1, 2, 2, 2],
                blocks_per_stage: 1,
                kernel_size: 3,
            },
            embed_dim: 4,
            n_freq_layers: 2,
            fdl_enabled: true,
            tdl_enabled: true,
            freq_out_len: 16,
            slstm: SlstmConfig {
                hidden_size: 24,
                layers: 1,
            },
            head: vec![24, 16, 2],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.in_channels != 6 {
            return fail(format!("in_channels must be 6, got {}", self.in_channels));
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be >= 1".into());
        }
        if self.n_freq_layers == 0 {
            return fail("n_freq_layers must be >= 1".into());
        }
        if self.head.len() != 3 {
            return fail(format!("head must have exactly 3 layers, got {}", self.head.len()));
        }
        if *self.head.last().unwrap() != 2 {
            return fail("head output width must be 2".into());
        }
        let b = &self.backbone;
        if b.stage_channels.is_empty() || b.stage_channels.len() != b.stage_strides.len() {
            return fail("backbone stage_channels/stage_strides must be non-empty and equal length".into());
        }
        if b.blocks_per_stage == 0 || b.kernel_size == 0 {
            return fail("backbone blocks_per_stage and kernel_size must be >= 1".into());
        }
        if b.stage_strides.iter().any(|&s| s == 0) {
            return fail("backbone strides must be >= 1".into());
        }
        if self.slstm.hidden_size == 0 || self.slstm.layers == 0 {
            return fail("slstm hidden_size and layers must be >= 1".into());
        }
        if self.freq_out_len < 2 {
            return fail("freq_out_len must be >= 2".into());
        }
        if self.res_len() < 2 {
            return fail(format!(
                "window_len {} too short: backbone output length {} is below 2",
                self.window_len,
                self.res_len()
            ));
        }
        if self.res_channels() < 2 {
            return fail("backbone output channels must be >= 2".into());
        }
        Ok(())
    }

    /// Channels of the backbone output (C_res).
    pub fn res_channels(&self) -> usize {
        *self.backbone.stage_channels.last().unwrap()
    }

    /// Temporal length of the backbone output (L_res): the window length
    /// divided by the product of stage strides, rounding up per stage.
    pub fn res_len(&self) -> usize {
        self.backbone
            .stage_strides
            .iter()
            .fold(self.window_len, |l, &s| l.div_ceil(s))
    }

    /// Width of the head input: the final hidden state when the time stage
    /// is enabled, otherwise the temporally pooled feature channels.
    pub fn head_input_dim(&self) -> usize {
        if self.tdl_enabled {
            self.slstm.hidden_size
        } else {
            self.res_channels()
        }
    }
}

/// Backbone output features (C_res × L_res).
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneFeatures {
    pub x_res: Array2<f64>,
}

/// Token-embedded features (C_res × L_res × d).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedFeatures {
    pub x_emb: Array3<f64>,
}

/// Frequency-stage output features (C_fre × L_fre).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFeatures {
    pub x_fre: Array2<f64>,
}

/// Time-stage output: the full hidden sequence and its final state.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFeatures {
    pub x_temp: Array2<f64>,
    pub h_last: Array1<f64>,
}

/// Inserts the embedding dimension: `x_emb[c, l, k] = x_res[c, l] · w1[k]`.
pub fn token_embed(x_res: &Array2<f64>, w1: &Array1<f64>) -> EmbeddedFeatures {
    let (c, l) = x_res.dim();
    let d = w1.len();
    let x_emb = Array3::from_shape_fn((c, l, d), |(ci, li, k)| x_res[[ci, li]] * w1[k]);
    EmbeddedFeatures { x_emb }
}

pub(crate) struct HeadCache {
    input: Array1<f64>,
    pre: Vec<Array1<f64>>,
    act_out: Vec<Array1<f64>>,
}

pub(crate) fn head_fwd(
    layers: &[params::Affine],
    input: &Array1<f64>,
    act: Activation,
) -> ([f64; 2], HeadCache) {
    let mut pre = Vec::with_capacity(layers.len());
    let mut act_out = Vec::with_capacity(layers.len());
    let mut cur = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        let p = layer.w.dot(&cur) + &layer.b;
        cur = if i + 1 < layers.len() {
            p.mapv(|v| act.apply(v))
        } else {
            p.clone()
        };
        pre.push(p);
        act_out.push(cur.clone());
    }
    let out = [cur[0], cur[1]];
    (
        out,
        HeadCache {
            input: input.clone(),
            pre,
            act_out,
        },
    )
}

pub(crate) fn head_bwd(
    layers: &[params::Affine],
    grads: &mut [params::Affine],
    cache: &HeadCache,
    d_v: [f64; 2],
    act: Activation,
) -> Array1<f64> {
    let mut d = Array1::from_vec(vec![d_v[0], d_v[1]]);
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            d = &d * &cache.pre[i].mapv(|v| act.grad_from_pre(v));
        }
        let upstream = if i == 0 {
            &cache.input
        } else {
            &cache.act_out[i - 1]
        };
        for (row, &dv) in d.iter().enumerate() {
            grads[i].b[row] += dv;
            for (col, &uv) in upstream.iter().enumerate() {
                grads[i].w[[row, col]] += dv * uv;
            }
        }
        d = layers[i].w.t().dot(&d);
    }
    d
}

pub(crate) struct FtinCache {
    backbone: backbone::BackboneCache,
    fdl: Option<fdl::FdlCache>,
    slstm: Option<slstm::SlstmCache>,
    feat_len: usize,
    head: HeadCache,
}

/// The model: a validated config plus precomputed spectral tables.
#[derive(Debug, Clone)]
pub struct FtinModel {
    pub config: FtinConfig,
    plan_channel: SpectralPlan,
    plan_temporal: SpectralPlan,
}

impl FtinModel {
    pub fn new(config: FtinConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let plan_channel = SpectralPlan::new(config.res_channels());
        let plan_temporal = SpectralPlan::new(config.res_len());
        Ok(Self {
            config,
            plan_channel,
            plan_temporal,
        })
    }

    pub fn init_params(&self, seed: u64) -> FtinParams {
        FtinParams::init(&self.config, seed).expect("config validated at construction")
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), ModelError> {
        let expect = (self.config.in_channels, self.config.window_len);
        if x.dim() != expect {
            return Err(ModelError::Contract(format!(
                "input shape {:?} does not match configured {:?}",
                x.dim(),
                expect
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ModelError::Contract("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Backbone stage on one window.
    pub fn resnet1d_forward(
        &self,
        params: &FtinParams,
        x: &Array2<f64>,
    ) -> Result<BackboneFeatures, ModelError> {
        self.check_input(x)?;
        let (x_res, _) = backbone_fwd(&params.backbone, x);
        Ok(BackboneFeatures { x_res })
    }

    /// Frequency stage on backbone features.
    pub fn fdl_forward(
        &self,
        params: &FtinParams,
        feats: &BackboneFeatures,
    ) -> Result<FrequencyFeatures, ModelError> {
        if !self.config.fdl_enabled {
            return Err(ModelError::Contract("fdl stage is disabled in this config".into()));
        }
        let (x_fre, _) = fdl_fwd(
            &params.fdl,
            &self.plan_channel,
            &self.plan_temporal,
            &feats.x_res,
            self.config.activation,
        )?;
        Ok(FrequencyFeatures { x_fre })
    }

    /// Time stage on a (features × time) sequence.
    pub fn slstm_forward(
        &self,
        params: &FtinParams,
        feats: &Array2<f64>,
    ) -> Result<TemporalFeatures, ModelError> {
        if !self.config.tdl_enabled {
            return Err(ModelError::Contract("tdl stage is disabled in this config".into()));
        }
        let (x_temp, h_last, _) = slstm_fwd(&params.slstm, feats)?;
        Ok(TemporalFeatures { x_temp, h_last })
    }

    /// Regression head on a fixed-size feature vector.
    pub fn head_forward(
        &self,
        params: &FtinParams,
        input: &Array1<f64>,
    ) -> Result<[f64; 2], ModelError> {
        let expect = params.head[0].w.ncols();
        if input.len() != expect {
            return Err(ModelError::Contract(format!(
                "head input length {} does not match {}",
                input.len(),
                expect
            )));
        }
        Ok(head_fwd(&params.head, input, self.config.activation).0)
    }

    /// Full forward pass of one window; routing follows the toggles.
    pub fn forward(&self, params: &FtinParams, x: &Array2<f64>) -> Result<[f64; 2], ModelError> {
        Ok(self.forward_cached(params, x)?.0)
    }

    /// Forward pass over a batch of windows; row `b` equals the
    /// single-window forward of window `b`.
    pub fn forward_batch(
        &self,
        params: &FtinParams,
        windows: &[Array2<f64>],
    ) -> Result<Vec<[f64; 2]>, ModelError> {
        windows.iter().map(|x| self.forward(params, x)).collect()
    }

    pub(crate) fn forward_cached(
        &self,
        params: &FtinParams,
        x: &Array2<f64>,
    ) -> Result<([f64; 2], FtinCache), ModelError> {
        self.check_input(x)?;
        let (x_res, backbone_cache) = backbone_fwd(&params.backbone, x);
        let (feats, fdl_cache) = if self.config.fdl_enabled {
            let (x_fre, cache) = fdl_fwd(
                &params.fdl,
                &self.plan_channel,
                &self.plan_temporal,
                &x_res,
                self.config.activation,
            )?;
            (x_fre, Some(cache))
        } else {
            (x_res, None)
        };
        let feat_len = feats.ncols();
        let (head_in, slstm_cache) = if self.config.tdl_enabled {
            let (_, h_last, cache) = slstm_fwd(&params.slstm, &feats)?;
            (h_last, Some(cache))
        } else {
            (feats.mean_axis(Axis(1)).unwrap(), None)
        };
        let (v, head_cache) = head_fwd(&params.head, &head_in, self.config.activation);
        if !v.iter().all(|u| u.is_finite()) {
            return Err(ModelError::Numeric {
                location: "head output".into(),
                message: "non-finite velocity estimate".into(),
            });
        }
        Ok((
            v,
            FtinCache {
                backbone: backbone_cache,
                fdl: fdl_cache,
                slstm: slstm_cache,
                feat_len,
                head: head_cache,
            },
        ))
    }

    /// Accumulates parameter gradients for one window into `grads`.
    pub(crate) fn backward(
        &self,
        params: &FtinParams,
        cache: &FtinCache,
        d_v: [f64; 2],
        grads: &mut FtinParams,
    ) {
        let act = self.config.activation;
        let d_head_in = head_bwd(&params.head, &mut grads.head, &cache.head, d_v, act);
        let d_feats: Array2<f64> = match &cache.slstm {
            Some(slstm_cache) => {
                let hidden = self.config.slstm.hidden_size;
                let d_hseq = Array2::zeros((hidden, cache.feat_len));
                slstm_bwd(
                    &params.slstm,
                    &mut grads.slstm,
                    slstm_cache,
                    &d_hseq,
                    &d_head_in,
                )
            }
            None => {
                let scale = 1.0 / cache.feat_len as f64;
                let mut d = Array2::zeros((d_head_in.len(), cache.feat_len));
                for (i, &g) in d_head_in.iter().enumerate() {
                    for j in 0..cache.feat_len {
                        d[[i, j]] = g * scale;
                    }
                }
                d
            }
        };
        let d_x_res = match &cache.fdl {
            Some(fdl_cache) => fdl_bwd(
                &params.fdl,
                &mut grads.fdl,
                &self.plan_channel,
                &self.plan_temporal,
                fdl_cache,
                &d_feats,
                act,
            ),
            None => d_feats,
        };
        backbone_bwd(&params.backbone, &mut grads.backbone, &cache.backbone, &d_x_res);
    }
}

/// One-shot forward pass building the model from a config.
pub fn ftin_forward(
    params: &FtinParams,
    config: &FtinConfig,
    x: &Array2<f64>,
) -> Result<[f64; 2], ModelError> {
    FtinModel::new(config.clone())?.forward(params, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> FtinConfig {
        FtinConfig {
            window_len: 32,
            in_channels: 6,
            backbone: BackboneConfig {
                stage_channels: vec![4, 8],
                stage_strides: vec![1, 2],
                blocks_per_stage: 1,
                kernel_size: 3,
            },
            embed_dim: 3,
            n_freq_layers: 2,
            fdl_enabled: true,
            tdl_enabled: true,
            freq_out_len: 8,
            slstm: SlstmConfig {
                hidden_size: 5,
                layers: 1,
            },
            head: vec![6, 4, 2],
            activation: Activation::Relu,
        }
    }

    fn window(seed: usize, config: &FtinConfig) -> Array2<f64> {
        Array2::from_shape_fn((config.in_channels, config.window_len), |(i, j)| {
            ((seed * 31 + i * 7 + j) % 17) as f64 / 17.0 - 0.5
        })
    }

    #[test]
    fn default_shapes_follow_stride_arithmetic() {
        let config = FtinConfig::default_paper();
        assert_eq!(config.res_channels(), 256);
        assert_eq!(config.res_len(), 25);
        assert_eq!(config.res_len() * config.embed_dim, 800);
    }

    #[test]
    fn backbone_output_shape_matches_config() {
        let config = small_config();
        let model = FtinModel::new(config.clone()).unwrap();
        let params = model.init_params(0);
        let feats = model.resnet1d_forward(&params, &window(1, &config)).unwrap();
        assert_eq!(feats.x_res.dim(), (8, 16));
    }

    #[test]
    fn token_embed_matches_scalar_products() {
        let x = ndarray::array![[5.0, 1.0], [0.0, -2.0]];
        let w = ndarray::array![2.0, 3.0];
        let emb = token_embed(&x, &w);
        assert_eq!(emb.x_emb.dim(), (2, 2, 2));
        assert_eq!(emb.x_emb[[0, 0, 0]], 10.0);
        assert_eq!(emb.x_emb[[0, 0, 1]], 15.0);
        assert_eq!(emb.x_emb[[1, 1, 0]], -4.0);
        // d = 1 with unit weight keeps values
        let emb1 = token_embed(&x, &ndarray::array![1.0]);
        for ci in 0..2 {
            for li in 0..2 {
                assert_eq!(emb1.x_emb[[ci, li, 0]], x[[ci, li]]);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let config = small_config();
        let model = FtinModel::new(config.clone()).unwrap();
        let params = model.init_params(3);
        let x = window(2, &config);
        let first = model.forward(&params, &x).unwrap();
        for _ in 0..10 {
            assert_eq!(model.forward(&params, &x).unwrap(), first);
        }
    }

    #[test]
    fn disabled_stages_match_direct_composition() {
        let mut config = small_config();
        config.fdl_enabled = false;
        config.tdl_enabled = false;
        let model = FtinModel::new(config.clone()).unwrap();
        let params = model.init_params(4);
        let x = window(3, &config);
        let via_forward = model.forward(&params, &x).unwrap();
        let feats = model.resnet1d_forward(&params, &x).unwrap();
        let pooled = feats.x_res.mean_axis(Axis(1)).unwrap();
        let direct = model.head_forward(&params, &pooled).unwrap();
        assert_eq!(via_forward, direct);
    }

    #[test]
    fn batch_rows_equal_single_forwards() {
        let config = small_config();
        let model = FtinModel::new(config.clone()).unwrap();
        let params = model.init_params(5);
        let windows: Vec<_> = (0..4).map(|s| window(s, &config)).collect();
        let batch = model.forward_batch(&params, &windows).unwrap();
        for (x, row) in windows.iter().zip(&batch) {
            assert_eq!(model.forward(&params, x).unwrap(), *row);
        }
    }

    #[test]
    fn zero_head_weights_output_zero() {
        let config = small_config();
        let model = FtinModel::new(config.clone()).unwrap();
        let mut params = model.init_params(6);
        for layer in &mut params.head {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let v = model.forward(&params, &window(0, &config)).unwrap();
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn output_is_two_dimensional_for_all_toggles() {
        for (fdl, tdl) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut config = small_config();
            config.fdl_enabled = fdl;
            config.tdl_enabled = tdl;
            let model = FtinModel::new(config.clone()).unwrap();
            let params = model.init_params(7);
            let v = model.forward(&params, &window(1, &config)).unwrap();
            assert_eq!(v.len(), 2);
            assert!(v.iter().all(|u| u.is_finite()));
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut c = small_config();
        c.in_channels = 5;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.head = vec![4, 2];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.head = vec![4, 3, 3];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.n_freq_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn wrong_input_shape_is_a_contract_error() {
        let config = small_config();
        let model = FtinModel::new(config).unwrap();
        let params = model.init_params(1);
        let bad = Array2::zeros((6, 31));
        assert!(matches!(
            model.forward(&params, &bad),
            Err(ModelError::Contract(_))
        ));
    }
}
