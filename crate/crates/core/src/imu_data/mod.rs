//! Canonical IMU data model: timestamped gyro/accelerometer streams with
//! optional orientation and ground-truth position, plus the windowing,
//! frame-rotation, and dataset-splitting steps that turn raw sequences into
//! training samples.

mod canonical;

pub use canonical::{load_canonical, save_canonical, CanonicalMeta};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative tolerance on `median(dt)` versus the nominal sample period.
pub const RATE_TOLERANCE: f64 = 0.05;

/// Unit-norm tolerance for orientation quaternions.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;

/// Errors produced by data loading, validation, and windowing.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata error: {0}")]
    Meta(String),
    #[error("missing required column `{column}`")]
    Schema { column: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error at sample {index}: {message}")]
    Integrity { index: usize, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("labeling error: {0}")]
    Label(String),
    #[error("size error: {0}")]
    Size(String),
}

/// Reference frame the accelerometer/gyroscope vectors are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Body,
    World,
}

/// One IMU measurement.
///
/// `t` is in seconds, `gyro` in rad/s, `acce` in m/s² (specific force).
/// `quat` (w, x, y, z) rotates body vectors into the world frame; `pos` is
/// the ground-truth world position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: [f64; 3],
    pub acce: [f64; 3],
    pub quat: Option<[f64; 4]>,
    pub pos: Option<[f64; 3]>,
}

/// An ordered IMU stream at a nominal rate, the unit of ingestion and
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    pub samples: Vec<ImuSample>,
    pub rate: f64,
    pub frame: Frame,
    pub meta: BTreeMap<String, String>,
}

impl ImuSequence {
    /// Builds a sequence and checks its invariants: at least two samples,
    /// strictly increasing timestamps, median sample period within
    /// [`RATE_TOLERANCE`] of `1/rate`, and unit quaternions where present.
    pub fn new(
        samples: Vec<ImuSample>,
        rate: f64,
        frame: Frame,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, DataError> {
        let seq = Self {
            samples,
            rate,
            frame,
            meta,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.samples.len() < 2 {
            return Err(DataError::Size(format!(
                "sequence needs at least 2 samples, got {}",
                self.samples.len()
            )));
        }
        if !(self.rate > 0.0) {
            return Err(DataError::Meta(format!("rate must be positive, got {}", self.rate)));
        }
        for (i, pair) in self.samples.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                return Err(DataError::Integrity {
                    index: i + 1,
                    message: format!(
                        "timestamps not strictly increasing ({} then {})",
                        pair[0].t, pair[1].t
                    ),
                });
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if let Some(q) = s.quat {
                let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
                    return Err(DataError::Integrity {
                        index: i,
                        message: format!("quaternion norm {norm} not within tolerance of 1"),
                    });
                }
            }
        }
        let mut dts: Vec<f64> = self.samples.windows(2).map(|p| p[1].t - p[0].t).collect();
        dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_dt = dts[dts.len() / 2];
        let nominal = 1.0 / self.rate;
        if ((median_dt - nominal) / nominal).abs() >= RATE_TOLERANCE {
            return Err(DataError::Meta(format!(
                "median dt {median_dt} inconsistent with nominal rate {} Hz",
                self.rate
            )));
        }
        Ok(())
    }

    /// True when every sample carries ground-truth position.
    pub fn has_pos(&self) -> bool {
        self.samples.iter().all(|s| s.pos.is_some())
    }

    /// True when every sample carries an orientation quaternion.
    pub fn has_quat(&self) -> bool {
        self.samples.iter().all(|s| s.quat.is_some())
    }
}

/// A C×L IMU slice with its mean-horizontal-velocity label.
///
/// Channel order: world-frame accelerometer x,y,z then gyroscope x,y,z.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub x: Array2<f64>,
    pub v: [f64; 2],
    pub t_start: f64,
}

/// Number of IMU channels in a window.
pub const WINDOW_CHANNELS: usize = 6;

/// Rotates a body-frame vector into the world frame by quaternion
/// `q = (w, x, y, z)`: `v' = v + 2w(u×v) + 2u×(u×v)`.
fn rotate_vec(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let (w, u) = (q[0], [q[1], q[2], q[3]]);
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let uv = cross(u, v);
    let uuv = cross(u, uv);
    [
        v[0] + 2.0 * (w * uv[0] + uuv[0]),
        v[1] + 2.0 * (w * uv[1] + uuv[1]),
        v[2] + 2.0 * (w * uv[2] + uuv[2]),
    ]
}

/// Rotates accelerometer and gyroscope vectors of every sample into the
/// world frame using the per-sample quaternion. All other fields are left
/// unchanged; errors if any sample lacks a quaternion.
pub fn rotate_to_world(seq: &ImuSequence) -> Result<ImuSequence, DataError> {
    for (i, s) in seq.samples.iter().enumerate() {
        if s.quat.is_none() {
            return Err(DataError::Precondition(format!(
                "sample {i} has no orientation quaternion"
            )));
        }
    }
    let samples = seq
        .samples
        .iter()
        .map(|s| {
            let q = s.quat.unwrap();
            ImuSample {
                acce: rotate_vec(q, s.acce),
                gyro: rotate_vec(q, s.gyro),
                ..*s
            }
        })
        .collect();
    Ok(ImuSequence {
        samples,
        rate: seq.rate,
        frame: Frame::World,
        meta: seq.meta.clone(),
    })
}

/// Cuts labeled windows of length `l` at offsets `0, stride, 2·stride, …`,
/// discarding the last partial window. The label is the mean horizontal
/// velocity over the window span, `(pos_end − pos_start) / (t_end − t_start)`.
pub fn make_windows(
    seq: &ImuSequence,
    l: usize,
    stride: usize,
) -> Result<Vec<LabeledWindow>, DataError> {
    if l < 2 || stride == 0 {
        return Err(DataError::Precondition(format!(
            "window length must be >= 2 and stride >= 1 (got l={l}, stride={stride})"
        )));
    }
    let n = seq.samples.len();
    if l > n {
        return Err(DataError::Size(format!(
            "window length {l} exceeds sequence length {n}"
        )));
    }
    if !seq.has_pos() {
        return Err(DataError::Label(
            "sequence has no ground-truth positions to label windows".into(),
        ));
    }
    let mut windows = Vec::with_capacity((n - l) / stride + 1);
    let mut offset = 0;
    while offset + l <= n {
        let first = &seq.samples[offset];
        let last = &seq.samples[offset + l - 1];
        let p0 = first.pos.unwrap();
        let p1 = last.pos.unwrap();
        let span = last.t - first.t;
        let v = [(p1[0] - p0[0]) / span, (p1[1] - p0[1]) / span];
        let mut x = Array2::zeros((WINDOW_CHANNELS, l));
        for (j, s) in seq.samples[offset..offset + l].iter().enumerate() {
            x[[0, j]] = s.acce[0];
            x[[1, j]] = s.acce[1];
            x[[2, j]] = s.acce[2];
            x[[3, j]] = s.gyro[0];
            x[[4, j]] = s.gyro[1];
            x[[5, j]] = s.gyro[2];
        }
        windows.push(LabeledWindow {
            x,
            v,
            t_start: first.t,
        });
        offset += stride;
    }
    Ok(windows)
}

/// Deterministic 8:1:1 split. Sizes are `⌈0.8n⌉ / ⌈0.1n⌉ / remainder`; when
/// the rounding leaves the test bucket empty one item is moved from train
/// to test so all three buckets stay non-empty.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>), DataError> {
    let n = items.len();
    if n < 10 {
        return Err(DataError::Size(format!(
            "need at least 10 sequences to split 8:1:1, got {n}"
        )));
    }
    let mut n_train = (0.8 * n as f64).ceil() as usize;
    let n_val = (0.1 * n as f64).ceil() as usize;
    if n_train + n_val >= n {
        n_train = n - n_val - 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> {
        idx.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_seq(n: usize, rate: f64, pos_fn: impl Fn(f64) -> [f64; 3]) -> ImuSequence {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                ImuSample {
                    t,
                    gyro: [0.0; 3],
                    acce: [0.0; 3],
                    quat: Some([1.0, 0.0, 0.0, 0.0]),
                    pos: Some(pos_fn(t)),
                }
            })
            .collect();
        ImuSequence::new(samples, rate, Frame::World, BTreeMap::new()).unwrap()
    }

    #[test]
    fn sequence_rejects_non_monotone_timestamps() {
        let mut samples: Vec<ImuSample> = (0..5)
            .map(|i| ImuSample {
                t: i as f64 * 0.01,
                gyro: [0.0; 3],
                acce: [0.0; 3],
                quat: None,
                pos: None,
            })
            .collect();
        samples[3].t = samples[2].t;
        let err = ImuSequence::new(samples, 100.0, Frame::Body, BTreeMap::new()).unwrap_err();
        match err {
            DataError::Integrity { index, .. } => assert_eq!(index, 3),
            other => panic!("expected integrity error, got {other}"),
        }
    }

    #[test]
    fn sequence_rejects_non_unit_quaternion() {
        let samples = vec![
            ImuSample {
                t: 0.0,
                gyro: [0.0; 3],
                acce: [0.0; 3],
                quat: Some([1.0, 0.1, 0.0, 0.0]),
                pos: None,
            },
            ImuSample {
                t: 0.01,
                gyro: [0.0; 3],
                acce: [0.0; 3],
                quat: Some([1.0, 0.0, 0.0, 0.0]),
                pos: None,
            },
        ];
        assert!(ImuSequence::new(samples, 100.0, Frame::Body, BTreeMap::new()).is_err());
    }

    #[test]
    fn rotate_identity_quaternion_is_noop() {
        let seq = uniform_seq(10, 100.0, |_| [0.0; 3]);
        let mut seq = seq;
        for s in &mut seq.samples {
            s.acce = [1.0, 2.0, 3.0];
            s.gyro = [-0.5, 0.25, 0.125];
        }
        let out = rotate_to_world(&seq).unwrap();
        for (a, b) in seq.samples.iter().zip(out.samples.iter()) {
            assert_eq!(a.acce, b.acce);
            assert_eq!(a.gyro, b.gyro);
        }
    }

    #[test]
    fn rotate_quarter_yaw_maps_x_to_y() {
        let half = std::f64::consts::FRAC_PI_4;
        let q = [half.cos(), 0.0, 0.0, half.sin()];
        let mut seq = uniform_seq(3, 100.0, |_| [0.0; 3]);
        for s in &mut seq.samples {
            s.quat = Some(q);
            s.acce = [1.0, 0.0, 0.0];
        }
        let out = rotate_to_world(&seq).unwrap();
        let a = out.samples[0].acce;
        assert!((a[0]).abs() < 1e-9 && (a[1] - 1.0).abs() < 1e-9 && a[2].abs() < 1e-9);
    }

    #[test]
    fn rotate_requires_quat_on_every_sample() {
        let mut seq = uniform_seq(4, 100.0, |_| [0.0; 3]);
        seq.samples[2].quat = None;
        assert!(matches!(
            rotate_to_world(&seq),
            Err(DataError::Precondition(_))
        ));
    }

    #[test]
    fn windows_count_matches_index_arithmetic() {
        let seq = uniform_seq(400, 100.0, |t| [t, 0.0, 0.0]);
        let windows = make_windows(&seq, 200, 100).unwrap();
        assert_eq!(windows.len(), 3);
        assert_eq!(windows[0].t_start, 0.0);
        assert!((windows[1].t_start - 1.0).abs() < 1e-12);
        assert!((windows[2].t_start - 2.0).abs() < 1e-12);
    }

    #[test]
    fn straight_line_labels_are_constant_velocity() {
        let seq = uniform_seq(400, 100.0, |t| [t, 0.0, 0.0]);
        for w in make_windows(&seq, 100, 50).unwrap() {
            assert!((w.v[0] - 1.0).abs() < 1e-9);
            assert!(w.v[1].abs() < 1e-12);
        }
    }

    #[test]
    fn windows_error_when_too_long_or_unlabeled() {
        let seq = uniform_seq(50, 100.0, |t| [t, 0.0, 0.0]);
        assert!(matches!(
            make_windows(&seq, 51, 10),
            Err(DataError::Size(_))
        ));
        let mut unlabeled = seq.clone();
        for s in &mut unlabeled.samples {
            s.pos = None;
        }
        assert!(matches!(
            make_windows(&unlabeled, 10, 5),
            Err(DataError::Label(_))
        ));
    }

    #[test]
    fn window_slices_preserve_content_at_stride_l() {
        let rate = 100.0;
        let n = 60;
        let mut seq = uniform_seq(n, rate, |t| [t, t * t, 0.0]);
        for (i, s) in seq.samples.iter_mut().enumerate() {
            s.acce = [i as f64, -(i as f64), 0.5 * i as f64];
            s.gyro = [0.1 * i as f64, 0.0, -0.2 * i as f64];
        }
        let l = 20;
        let windows = make_windows(&seq, l, l).unwrap();
        for (k, w) in windows.iter().enumerate() {
            for j in 0..l {
                let s = &seq.samples[k * l + j];
                assert_eq!(w.x[[0, j]], s.acce[0]);
                assert_eq!(w.x[[3, j]], s.gyro[0]);
                assert_eq!(w.x[[5, j]], s.gyro[2]);
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, va, te) = split_dataset(items.clone(), 42).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
        let (tr2, va2, te2) = split_dataset(items, 42).unwrap();
        assert_eq!((tr, va, te), (tr2, va2, te2));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        for n in [10usize, 11, 12, 13, 14, 37, 100] {
            let items: Vec<usize> = (0..n).collect();
            let (tr, va, te) = split_dataset(items, 7).unwrap();
            assert!(!tr.is_empty() && !va.is_empty() && !te.is_empty(), "n={n}");
            let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n}");
        }
        let items: Vec<usize> = (0..100).collect();
        let (tr, va, te) = split_dataset(items, 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
    }

    #[test]
    fn split_rejects_fewer_than_ten() {
        assert!(matches!(
            split_dataset((0..9).collect::<Vec<usize>>(), 1),
            Err(DataError::Size(_))
        ));
    }
}
