//! Learnable parameter containers. Gradients, Adam moments, and checkpoints
//! all reuse [`FtinParams`] as a structural mirror, so one canonical tensor
//! traversal order serves the optimizer, the checkpoint format, and the
//! finite-difference harness alike.

use super::{FtinConfig, ModelError};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense affine map, weights stored (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// 1-D convolution, weights stored (c_out, c_in·k) to match the im2col GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub c_in: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Per-channel normalization over the temporal axis (no batch statistics,
/// so the forward pass stays a pure per-sample function).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Residual basic block: two convolutions with normalization, plus an
/// optional projection on the skip path when shape changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockParams {
    pub conv1: Conv1d,
    pub norm1: ChannelNorm,
    pub conv2: Conv1d,
    pub norm2: ChannelNorm,
    pub proj: Option<(Conv1d, ChannelNorm)>,
}

/// One complex-valued dense layer stored as paired real arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinear {
    pub w_re: Array2<f64>,
    pub w_im: Array2<f64>,
    pub b_re: Array1<f64>,
    pub b_im: Array1<f64>,
}

/// Frequency-domain stage parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FdlParams {
    /// Token-embedding row vector (Eq. of the embedding step), length d.
    pub token_w: Array1<f64>,
    pub channel_mlp: Vec<ComplexLinear>,
    pub temporal_mlp: Vec<ComplexLinear>,
    /// Maps the flattened (L_res·d) axis to L_fre, shared across channels.
    pub fc: Affine,
}

/// One scalar-LSTM layer; gate order in the stacked matrices is z, i, f, o.
#[derive(Debug, Clone, PartialEq)]
pub struct SlstmLayerParams {
    pub w: Array2<f64>,
    pub r: Array2<f64>,
    pub b: Array1<f64>,
}

/// All learnable weights of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FtinParams {
    pub backbone: Vec<ResBlockParams>,
    pub fdl: FdlParams,
    pub slstm: Vec<SlstmLayerParams>,
    pub head: Vec<Affine>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

impl FtinParams {
    /// Fan-in-scaled uniform initialization; biases start at zero, norm
    /// scales at one, and the token embedding at 1/√d so the embedding step
    /// is near-identity at the start.
    pub fn init(config: &FtinConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.backbone.kernel_size;

        let mut backbone = Vec::new();
        let mut c_in = config.in_channels;
        for (&c_out, &stride) in config
            .backbone
            .stage_channels
            .iter()
            .zip(&config.backbone.stage_strides)
        {
            for block in 0..config.backbone.blocks_per_stage {
                let s = if block == 0 { stride } else { 1 };
                let block_c_in = if block == 0 { c_in } else { c_out };
                let conv = |rng: &mut ChaCha8Rng, ci: usize, kk: usize, st: usize| Conv1d {
                    w: uniform(rng, (c_out, ci * kk), ci * kk),
                    b: Array1::zeros(c_out),
                    c_in: ci,
                    kernel: kk,
                    stride: st,
                };
                let norm = || ChannelNorm {
                    gamma: Array1::ones(c_out),
                    beta: Array1::zeros(c_out),
                };
                let conv1 = conv(&mut rng, block_c_in, k, s);
                let norm1 = norm();
                let conv2 = conv(&mut rng, c_out, k, 1);
                let norm2 = norm();
                let proj = if block_c_in != c_out || s != 1 {
                    Some((conv(&mut rng, block_c_in, 1, s), norm()))
                } else {
                    None
                };
                backbone.push(ResBlockParams {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    proj,
                });
            }
            c_in = c_out;
        }

        let d = config.embed_dim;
        let complex_layer = |rng: &mut ChaCha8Rng| ComplexLinear {
            w_re: uniform(rng, (d, d), d),
            w_im: uniform(rng, (d, d), d),
            b_re: Array1::zeros(d),
            b_im: Array1::zeros(d),
        };
        let channel_mlp = (0..config.n_freq_layers)
            .map(|_| complex_layer(&mut rng))
            .collect();
        let temporal_mlp = (0..config.n_freq_layers)
            .map(|_| complex_layer(&mut rng))
            .collect();
        let flat_in = config.res_len() * d;
        let fdl = FdlParams {
            token_w: Array1::from_elem(d, 1.0 / (d as f64).sqrt()),
            channel_mlp,
            temporal_mlp,
            fc: Affine {
                w: uniform(&mut rng, (config.freq_out_len, flat_in), flat_in),
                b: Array1::zeros(config.freq_out_len),
            },
        };

        let hidden = config.slstm.hidden_size;
        let mut slstm = Vec::new();
        let mut in_dim = config.res_channels();
        for _ in 0..config.slstm.layers {
            slstm.push(SlstmLayerParams {
                w: uniform(&mut rng, (4 * hidden, in_dim), in_dim),
                r: uniform(&mut rng, (4 * hidden, hidden), hidden),
                b: Array1::zeros(4 * hidden),
            });
            in_dim = hidden;
        }

        let mut head = Vec::new();
        let mut h_in = config.head_input_dim();
        for &h_out in &config.head {
            head.push(Affine {
                w: uniform(&mut rng, (h_out, h_in), h_in),
                b: Array1::zeros(h_out),
            });
            h_in = h_out;
        }

        Ok(Self {
            backbone,
            fdl,
            slstm,
            head,
        })
    }

    /// Same structure with every tensor zeroed; the gradient/moment shape.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, s) in out.tensors_mut() {
            s.fill(0.0);
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let theirs = other.tensors();
        for ((_, mine), t) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(t.data) {
                *a += alpha * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, slice) in self.tensors_mut() {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// All tensors concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Inverse of [`FtinParams::flatten`].
    pub fn fill_from_flat(&mut self, data: &[f64]) -> Result<(), ModelError> {
        if data.len() != self.n_params() {
            return Err(ModelError::Checkpoint(format!(
                "flat parameter vector has {} elements, expected {}",
                data.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for (_, slice) in self.tensors_mut() {
            slice.copy_from_slice(&data[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }

    /// Named tensors in canonical order (`stage.block.tensor` scheme).
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        fn t1<'a>(name: String, a: &'a Array1<f64>) -> NamedTensor<'a> {
            NamedTensor {
                name,
                shape: vec![a.len()],
                data: a.as_slice().expect("owned arrays are contiguous"),
            }
        }
        fn t2<'a>(name: String, a: &'a Array2<f64>) -> NamedTensor<'a> {
            NamedTensor {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("owned arrays are contiguous"),
            }
        }
        for (i, b) in self.backbone.iter().enumerate() {
            let p = format!("backbone.block{i}");
            out.push(t2(format!("{p}.conv1.weight"), &b.conv1.w));
            out.push(t1(format!("{p}.conv1.bias"), &b.conv1.b));
            out.push(t1(format!("{p}.norm1.gamma"), &b.norm1.gamma));
            out.push(t1(format!("{p}.norm1.beta"), &b.norm1.beta));
            out.push(t2(format!("{p}.conv2.weight"), &b.conv2.w));
            out.push(t1(format!("{p}.conv2.bias"), &b.conv2.b));
            out.push(t1(format!("{p}.norm2.gamma"), &b.norm2.gamma));
            out.push(t1(format!("{p}.norm2.beta"), &b.norm2.beta));
            if let Some((c, n)) = &b.proj {
                out.push(t2(format!("{p}.proj.weight"), &c.w));
                out.push(t1(format!("{p}.proj.bias"), &c.b));
                out.push(t1(format!("{p}.proj_norm.gamma"), &n.gamma));
                out.push(t1(format!("{p}.proj_norm.beta"), &n.beta));
            }
        }
        out.push(t1("fdl.token.weight".into(), &self.fdl.token_w));
        for (i, l) in self.fdl.channel_mlp.iter().enumerate() {
            let p = format!("fdl.channel_mlp.layer{i}");
            out.push(t2(format!("{p}.w_re"), &l.w_re));
            out.push(t2(format!("{p}.w_im"), &l.w_im));
            out.push(t1(format!("{p}.b_re"), &l.b_re));
            out.push(t1(format!("{p}.b_im"), &l.b_im));
        }
        for (i, l) in self.fdl.temporal_mlp.iter().enumerate() {
            let p = format!("fdl.temporal_mlp.layer{i}");
            out.push(t2(format!("{p}.w_re"), &l.w_re));
            out.push(t2(format!("{p}.w_im"), &l.w_im));
            out.push(t1(format!("{p}.b_re"), &l.b_re));
            out.push(t1(format!("{p}.b_im"), &l.b_im));
        }
        out.push(t2("fdl.fc.weight".into(), &self.fdl.fc.w));
        out.push(t1("fdl.fc.bias".into(), &self.fdl.fc.b));
        for (i, l) in self.slstm.iter().enumerate() {
            let p = format!("tdl.layer{i}");
            out.push(t2(format!("{p}.w_input"), &l.w));
            out.push(t2(format!("{p}.w_recurrent"), &l.r));
            out.push(t1(format!("{p}.bias"), &l.b));
        }
        for (i, l) in self.head.iter().enumerate() {
            let p = format!("head.fc{i}");
            out.push(t2(format!("{p}.weight"), &l.w));
            out.push(t1(format!("{p}.bias"), &l.b));
        }
        out
    }

    /// Mutable view of every tensor in the same canonical order as
    /// [`FtinParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn m1<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: String, a: &'a mut Array1<f64>) {
            out.push((name, a.as_slice_mut().expect("owned arrays are contiguous")));
        }
        fn m2<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: String, a: &'a mut Array2<f64>) {
            out.push((name, a.as_slice_mut().expect("owned arrays are contiguous")));
        }
        for (i, b) in self.backbone.iter_mut().enumerate() {
            let p = format!("backbone.block{i}");
            m2(&mut out, format!("{p}.conv1.weight"), &mut b.conv1.w);
            m1(&mut out, format!("{p}.conv1.bias"), &mut b.conv1.b);
            m1(&mut out, format!("{p}.norm1.gamma"), &mut b.norm1.gamma);
            m1(&mut out, format!("{p}.norm1.beta"), &mut b.norm1.beta);
            m2(&mut out, format!("{p}.conv2.weight"), &mut b.conv2.w);
            m1(&mut out, format!("{p}.conv2.bias"), &mut b.conv2.b);
            m1(&mut out, format!("{p}.norm2.gamma"), &mut b.norm2.gamma);
            m1(&mut out, format!("{p}.norm2.beta"), &mut b.norm2.beta);
            if let Some((c, n)) = &mut b.proj {
                m2(&mut out, format!("{p}.proj.weight"), &mut c.w);
                m1(&mut out, format!("{p}.proj.bias"), &mut c.b);
                m1(&mut out, format!("{p}.proj_norm.gamma"), &mut n.gamma);
                m1(&mut out, format!("{p}.proj_norm.beta"), &mut n.beta);
            }
        }
        m1(&mut out, "fdl.token.weight".into(), &mut self.fdl.token_w);
        for (i, l) in self.fdl.channel_mlp.iter_mut().enumerate() {
            let p = format!("fdl.channel_mlp.layer{i}");
            m2(&mut out, format!("{p}.w_re"), &mut l.w_re);
            m2(&mut out, format!("{p}.w_im"), &mut l.w_im);
            m1(&mut out, format!("{p}.b_re"), &mut l.b_re);
            m1(&mut out, format!("{p}.b_im"), &mut l.b_im);
        }
        for (i, l) in self.fdl.temporal_mlp.iter_mut().enumerate() {
            let p = format!("fdl.temporal_mlp.layer{i}");
            m2(&mut out, format!("{p}.w_re"), &mut l.w_re);
            m2(&mut out, format!("{p}.w_im"), &mut l.w_im);
            m1(&mut out, format!("{p}.b_re"), &mut l.b_re);
            m1(&mut out, format!("{p}.b_im"), &mut l.b_im);
        }
        m2(&mut out, "fdl.fc.weight".into(), &mut self.fdl.fc.w);
        m1(&mut out, "fdl.fc.bias".into(), &mut self.fdl.fc.b);
        for (i, l) in self.slstm.iter_mut().enumerate() {
            let p = format!("tdl.layer{i}");
            m2(&mut out, format!("{p}.w_input"), &mut l.w);
            m2(&mut out, format!("{p}.w_recurrent"), &mut l.r);
            m1(&mut out, format!("{p}.bias"), &mut l.b);
        }
        for (i, l) in self.head.iter_mut().enumerate() {
            let p = format!("head.fc{i}");
            m2(&mut out, format!("{p}.weight"), &mut l.w);
            m1(&mut out, format!("{p}.bias"), &mut l.b);
        }
        out
    }
}

/// A named, shaped view of one parameter tensor.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FtinConfig;

    #[test]
    fn tensor_traversals_agree() {
        let config = FtinConfig::default_desk();
        let mut params = FtinParams::init(&config, 1).unwrap();
        let names: Vec<(String, usize)> = params
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), t.data.len()))
            .collect();
        let names_mut: Vec<(String, usize)> = params
            .tensors_mut()
            .iter()
            .map(|(n, s)| (n.clone(), s.len()))
            .collect();
        assert_eq!(names, names_mut);
        assert!(!names.is_empty());
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let config = FtinConfig::default_desk();
        let a = FtinParams::init(&config, 9).unwrap();
        let b = FtinParams::init(&config, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
        let c = FtinParams::init(&config, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn axpy_and_zeros_like() {
        let config = FtinConfig::default_desk();
        let a = FtinParams::init(&config, 3).unwrap();
        let mut z = a.zeros_like();
        assert_eq!(z.n_params(), a.n_params());
        z.axpy(2.0, &a);
        let za = z.tensors();
        let aa = a.tensors();
        for (x, y) in za.iter().zip(aa.iter()) {
            for (u, v) in x.data.iter().zip(y.data.iter()) {
                assert_eq!(*u, 2.0 * v);
            }
        }
    }
}
