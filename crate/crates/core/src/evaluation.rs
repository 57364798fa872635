//! Trajectory reconstruction from window-level velocity predictions and the
//! ATE / RTE / PDE / CDF metrics used to score them.
//!
//! All metrics operate on a common time grid: the ground-truth timestamps
//! inside the overlap of both trajectories, with the prediction linearly
//! interpolated onto it. Inputs are time-sorted canonically first, so
//! sample order never affects results.

use crate::imu_data::{ImuSequence, WINDOW_CHANNELS};
use crate::model::{FtinModel, FtinParams, ModelError};
use crate::synth_world::Trajectory;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Default RTE displacement interval, seconds.
pub const RTE_INTERVAL_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("size error: {0}")]
    Size(String),
    #[error("trajectories do not overlap in time: {0}")]
    Overlap(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One point of an empirical CDF curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CdfPoint {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub ate: f64,
    pub rte: f64,
    pub pde: f64,
}

/// Dataset-level evaluation record: mean per-sequence metrics, the
/// per-sequence breakdown, and CDF curves over the per-sequence errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ate: f64,
    pub rte: f64,
    pub pde: f64,
    pub per_sequence: Vec<SequenceMetrics>,
    pub cdf_ate: Vec<CdfPoint>,
    pub cdf_rte: Vec<CdfPoint>,
}

/// Extracts the horizontal ground-truth path of a sequence.
pub fn trajectory_from_sequence(seq: &ImuSequence) -> Result<Trajectory, EvalError> {
    if !seq.has_pos() {
        return Err(EvalError::Size(
            "sequence has no ground-truth positions".into(),
        ));
    }
    let t = seq.samples.iter().map(|s| s.t).collect();
    let pos = seq
        .samples
        .iter()
        .map(|s| {
            let p = s.pos.unwrap();
            [p[0], p[1]]
        })
        .collect();
    let yaw = seq
        .samples
        .iter()
        .map(|s| s.quat.map_or(0.0, |q| 2.0 * q[3].atan2(q[0])))
        .collect();
    Ok(Trajectory { t, pos, yaw })
}

fn window_input(seq: &ImuSequence, offset: usize, l: usize) -> Array2<f64> {
    let mut x = Array2::zeros((WINDOW_CHANNELS, l));
    for (j, s) in seq.samples[offset..offset + l].iter().enumerate() {
        x[[0, j]] = s.acce[0];
        x[[1, j]] = s.acce[1];
        x[[2, j]] = s.acce[2];
        x[[3, j]] = s.gyro[0];
        x[[4, j]] = s.gyro[1];
        x[[5, j]] = s.gyro[2];
    }
    x
}

/// Integrates per-window velocity predictions into a trajectory.
///
/// Windows of length `l` start at offsets `0, stride, …`; the output has
/// one point per window, aligned to window-end timestamps. The first point
/// is seeded from the ground-truth position at its timestamp, then each
/// window's predicted velocity advances the position across the stride step
/// that ends at that window's end.
pub fn reconstruct_with<F>(
    mut predict: F,
    seq: &ImuSequence,
    l: usize,
    stride: usize,
) -> Result<Trajectory, EvalError>
where
    F: FnMut(&Array2<f64>) -> Result<[f64; 2], ModelError>,
{
    let n = seq.len();
    if l > n {
        return Err(EvalError::Size(format!(
            "sequence of {n} samples is shorter than one window of {l}"
        )));
    }
    if stride == 0 {
        return Err(EvalError::Size("stride must be >= 1".into()));
    }
    let offsets: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|o| o + l <= n)
        .collect();
    let first_end = offsets[0] + l - 1;
    let p0 = seq.samples[first_end]
        .pos
        .ok_or_else(|| EvalError::Size("reconstruction needs a ground-truth start position".into()))?;

    let mut t = Vec::with_capacity(offsets.len());
    let mut pos = Vec::with_capacity(offsets.len());
    let mut yaw = Vec::with_capacity(offsets.len());
    let mut p = [p0[0], p0[1]];
    for (k, &o) in offsets.iter().enumerate() {
        let end = o + l - 1;
        let v = predict(&window_input(seq, o, l))?;
        if k == 0 {
            t.push(seq.samples[end].t);
            pos.push(p);
            yaw.push(v[1].atan2(v[0]));
            continue;
        }
        let dt = seq.samples[end].t - *t.last().unwrap();
        p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
        t.push(seq.samples[end].t);
        pos.push(p);
        yaw.push(v[1].atan2(v[0]));
    }
    Ok(Trajectory { t, pos, yaw })
}

/// Model-backed reconstruction; window length comes from the model config.
pub fn reconstruct_trajectory(
    model: &FtinModel,
    params: &FtinParams,
    seq: &ImuSequence,
    stride: usize,
) -> Result<Trajectory, EvalError> {
    reconstruct_with(
        |x| model.forward(params, x),
        seq,
        model.config.window_len,
        stride,
    )
}

/// Time-sorted copy of a trajectory's (t, position) pairs.
fn sorted_points(traj: &Trajectory) -> Vec<(f64, [f64; 2])> {
    let mut pts: Vec<(f64, [f64; 2])> = traj.t.iter().copied().zip(traj.pos.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

fn interp(pts: &[(f64, [f64; 2])], t: f64) -> [f64; 2] {
    match pts.binary_search_by(|p| p.0.partial_cmp(&t).unwrap()) {
        Ok(i) => pts[i].1,
        Err(i) => {
            // callers only query inside the covered range
            let (lo, hi) = (&pts[i - 1], &pts[i]);
            let a = (t - lo.0) / (hi.0 - lo.0);
            [
                lo.1[0] + a * (hi.1[0] - lo.1[0]),
                lo.1[1] + a * (hi.1[1] - lo.1[1]),
            ]
        }
    }
}

/// Both trajectories resampled onto the ground-truth timestamps inside
/// their common time range.
fn common_grid(
    pred: &Trajectory,
    gt: &Trajectory,
) -> Result<(Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 2]>), EvalError> {
    if pred.len() < 2 || gt.len() < 2 {
        return Err(EvalError::Size("need at least 2 points per trajectory".into()));
    }
    let p = sorted_points(pred);
    let g = sorted_points(gt);
    let start = p[0].0.max(g[0].0);
    let end = p[p.len() - 1].0.min(g[g.len() - 1].0);
    if !(end > start) {
        return Err(EvalError::Overlap(format!(
            "prediction covers [{:.3}, {:.3}], ground truth [{:.3}, {:.3}]",
            p[0].0,
            p[p.len() - 1].0,
            g[0].0,
            g[g.len() - 1].0
        )));
    }
    let mut t_axis = Vec::new();
    let mut pred_pos = Vec::new();
    let mut gt_pos = Vec::new();
    for &(t, pos) in &g {
        if t >= start && t <= end {
            t_axis.push(t);
            gt_pos.push(pos);
            pred_pos.push(interp(&p, t));
        }
    }
    if t_axis.len() < 2 {
        return Err(EvalError::Overlap("fewer than 2 common timestamps".into()));
    }
    Ok((t_axis, pred_pos, gt_pos))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Absolute trajectory error: root-mean-square position error over the
/// common grid, with no alignment beyond the shared start position.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let (_, p, g) = common_grid(pred, gt)?;
    let sum: f64 = p.iter().zip(&g).map(|(a, b)| dist(*a, *b).powi(2)).sum();
    Ok((sum / p.len() as f64).sqrt())
}

/// Relative trajectory error: RMS error of displacements over `interval`
/// seconds. Spans shorter than the interval use the full span with the
/// error scaled by `interval / span`.
pub fn rte(pred: &Trajectory, gt: &Trajectory, interval: f64) -> Result<f64, EvalError> {
    if !(interval > 0.0) {
        return Err(EvalError::Degenerate("interval must be positive".into()));
    }
    let (t, p, g) = common_grid(pred, gt)?;
    let span = t[t.len() - 1] - t[0];
    let p_pts: Vec<(f64, [f64; 2])> = t.iter().copied().zip(p.iter().copied()).collect();
    let g_pts: Vec<(f64, [f64; 2])> = t.iter().copied().zip(g.iter().copied()).collect();
    if span < interval {
        let dp = [
            p[p.len() - 1][0] - p[0][0],
            p[p.len() - 1][1] - p[0][1],
        ];
        let dg = [
            g[g.len() - 1][0] - g[0][0],
            g[g.len() - 1][1] - g[0][1],
        ];
        let e = dist(dp, dg) * (interval / span);
        return Ok(e);
    }
    let t_end = t[t.len() - 1];
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &ti) in t.iter().enumerate() {
        let tj = ti + interval;
        if tj > t_end {
            break;
        }
        let pj = interp(&p_pts, tj);
        let gj = interp(&g_pts, tj);
        let dp = [pj[0] - p[i][0], pj[1] - p[i][1]];
        let dg = [gj[0] - g[i][0], gj[1] - g[i][1]];
        let e = dist(dp, dg);
        sum += e * e;
        count += 1;
    }
    Ok((sum / count as f64).sqrt())
}

/// Position drift error: endpoint error divided by the ground-truth path
/// arc length over the common grid.
pub fn pde(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let (_, p, g) = common_grid(pred, gt)?;
    let arc: f64 = g.windows(2).map(|w| dist(w[0], w[1])).sum();
    if arc == 0.0 {
        return Err(EvalError::Degenerate(
            "ground-truth path has zero arc length".into(),
        ));
    }
    Ok(dist(p[p.len() - 1], g[g.len() - 1]) / arc)
}

/// Empirical CDF of a list of errors: sorted unique thresholds with
/// fractions k/n.
pub fn cdf(errors: &[f64]) -> Result<Vec<CdfPoint>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Size("empty error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let point = CdfPoint {
            threshold: e,
            fraction: (i + 1) as f64 / n,
        };
        match out.last_mut() {
            Some(last) if last.threshold == e => *last = point,
            _ => out.push(point),
        }
    }
    Ok(out)
}

/// Per-sequence evaluation of a predictor over labeled sequences, plus the
/// aggregate report. The predictor is a closure so oracle and zero-velocity
/// baselines evaluate through the identical pipeline.
pub fn evaluate_with<F>(
    mut predict: F,
    sequences: &[(String, ImuSequence)],
    window_len: usize,
    stride: usize,
    rte_interval: f64,
) -> Result<MetricsReport, EvalError>
where
    F: FnMut(&Array2<f64>) -> Result<[f64; 2], ModelError>,
{
    if sequences.is_empty() {
        return Err(EvalError::Size("no sequences to evaluate".into()));
    }
    let mut per_sequence = Vec::with_capacity(sequences.len());
    for (id, seq) in sequences {
        let gt = trajectory_from_sequence(seq)?;
        let pred = reconstruct_with(&mut predict, seq, window_len, stride)?;
        per_sequence.push(SequenceMetrics {
            id: id.clone(),
            ate: ate(&pred, &gt)?,
            rte: rte(&pred, &gt, rte_interval)?,
            pde: pde(&pred, &gt)?,
        });
    }
    let mean = |f: fn(&SequenceMetrics) -> f64| {
        per_sequence.iter().map(f).sum::<f64>() / per_sequence.len() as f64
    };
    let ates: Vec<f64> = per_sequence.iter().map(|s| s.ate).collect();
    let rtes: Vec<f64> = per_sequence.iter().map(|s| s.rte).collect();
    Ok(MetricsReport {
        ate: mean(|s| s.ate),
        rte: mean(|s| s.rte),
        pde: mean(|s| s.pde),
        per_sequence,
        cdf_ate: cdf(&ates)?,
        cdf_rte: cdf(&rtes)?,
    })
}

/// Evaluates a trained model.
pub fn evaluate_model(
    model: &FtinModel,
    params: &FtinParams,
    sequences: &[(String, ImuSequence)],
    stride: usize,
    rte_interval: f64,
) -> Result<MetricsReport, EvalError> {
    evaluate_with(
        |x| model.forward(params, x),
        sequences,
        model.config.window_len,
        stride,
        rte_interval,
    )
}

/// The zero-velocity baseline: a constant predictor whose reconstruction
/// never leaves the start position.
pub fn evaluate_zero_baseline(
    sequences: &[(String, ImuSequence)],
    window_len: usize,
    stride: usize,
    rte_interval: f64,
) -> Result<MetricsReport, EvalError> {
    evaluate_with(
        |_| Ok([0.0, 0.0]),
        sequences,
        window_len,
        stride,
        rte_interval,
    )
}

/// Writes `trajectory_<id>.csv` rows `t,px_gt,py_gt,px_pred,py_pred` on the
/// common grid.
pub fn write_trajectory_csv(
    path: &Path,
    pred: &Trajectory,
    gt: &Trajectory,
) -> Result<(), EvalError> {
    let (t, p, g) = common_grid(pred, gt)?;
    let mut out = String::from("t,px_gt,py_gt,px_pred,py_pred\n");
    for i in 0..t.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t[i], g[i][0], g[i][1], p[i][0], p[i][1]
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
