//! Synthetic planar IMU world: smooth random trajectories plus a consistent
//! body-frame IMU simulation, so training and evaluation can run end to end
//! on data whose ground truth is exactly known.
//!
//! Motion is planar with yaw-only orientation. Speed and turn-rate profiles
//! are cubic splines through random waypoints squashed into strict bounds,
//! so generated paths are C²-smooth and respect the spec limits by
//! construction.

mod spline;

use crate::imu_data::{save_canonical, DataError, Frame, ImuSample, ImuSequence};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spline::CubicSpline;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// World-frame gravity, z component (m/s²); gravity vector is (0, 0, -G).
pub const GRAVITY: f64 = 9.81;

/// Spacing between random profile waypoints, seconds.
const WAYPOINT_SPACING: f64 = 4.0;

/// Sub-steps per sample period in the trajectory integrator.
const INTEGRATOR_SUBSTEPS: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec field `{field}`: {message}")]
    Spec { field: &'static str, message: String },
    #[error("size error: {0}")]
    Size(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Parameters of one synthetic trajectory and its IMU stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub rate: f64,
    pub speed_range: (f64, f64),
    pub turn_rate_max: f64,
    pub noise_acce: f64,
    pub noise_gyro: f64,
    pub seed: u64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |field: &'static str, message: String| Err(SynthError::Spec { field, message });
        if !(self.duration > 0.0) {
            return err("duration", format!("must be > 0, got {}", self.duration));
        }
        if !(self.rate > 0.0) {
            return err("rate", format!("must be > 0, got {}", self.rate));
        }
        if !(self.speed_range.0 <= self.speed_range.1) || self.speed_range.0 < 0.0 {
            return err(
                "speed_range",
                format!("need 0 <= min <= max, got {:?}", self.speed_range),
            );
        }
        if self.turn_rate_max < 0.0 {
            return err(
                "turn_rate_max",
                format!("must be >= 0, got {}", self.turn_rate_max),
            );
        }
        if self.noise_acce < 0.0 {
            return err("noise_acce", format!("must be >= 0, got {}", self.noise_acce));
        }
        if self.noise_gyro < 0.0 {
            return err("noise_gyro", format!("must be >= 0, got {}", self.noise_gyro));
        }
        Ok(())
    }
}

/// Ground-truth 2-D path: world positions and heading at sample timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    pub yaw: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Smooth profile in strict bounds: spline through random waypoints, pushed
/// through a squashing map so overshoot can never leave the interval.
struct BoundedProfile {
    spline: CubicSpline,
    lo: f64,
    hi: f64,
}

impl BoundedProfile {
    fn new(rng: &mut ChaCha8Rng, duration: f64, lo: f64, hi: f64) -> Self {
        let n = (duration / WAYPOINT_SPACING).ceil() as usize + 3;
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let spline = CubicSpline::natural_uniform(-WAYPOINT_SPACING, WAYPOINT_SPACING, ys);
        Self { spline, lo, hi }
    }

    /// logistic squash of the raw spline into (lo, hi)
    fn value(&self, t: f64) -> f64 {
        let u = self.spline.value(t);
        let s = 1.0 / (1.0 + (-2.0 * u).exp());
        self.lo + (self.hi - self.lo) * s
    }
}

/// Signed smooth profile in (-limit, limit).
struct SignedProfile {
    spline: CubicSpline,
    limit: f64,
}

impl SignedProfile {
    fn new(rng: &mut ChaCha8Rng, duration: f64, limit: f64) -> Self {
        let n = (duration / WAYPOINT_SPACING).ceil() as usize + 3;
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let spline = CubicSpline::natural_uniform(-WAYPOINT_SPACING, WAYPOINT_SPACING, ys);
        Self { spline, limit }
    }

    fn value(&self, t: f64) -> f64 {
        self.limit * self.spline.value(t).tanh()
    }
}

/// Generates a C²-smooth planar trajectory with speed inside
/// `spec.speed_range` and |yaw rate| below `spec.turn_rate_max`,
/// deterministically in `spec.seed`.
pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<Trajectory, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speed = BoundedProfile::new(&mut rng, spec.duration, spec.speed_range.0, spec.speed_range.1);
    let turn = SignedProfile::new(&mut rng, spec.duration, spec.turn_rate_max);
    let yaw0: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);

    let n = ((spec.duration * spec.rate).round() as usize).max(2);
    let dt = 1.0 / spec.rate;
    let h = dt / INTEGRATOR_SUBSTEPS as f64;

    let mut t_axis = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut yaw = Vec::with_capacity(n);

    // RK4 over state (x, y, theta); derivatives depend only on t and theta.
    let mut state = [0.0, 0.0, yaw0];
    let deriv = |t: f64, s: &[f64; 3]| -> [f64; 3] {
        let v = speed.value(t);
        [v * s[2].cos(), v * s[2].sin(), turn.value(t)]
    };
    for i in 0..n {
        let ti = i as f64 * dt;
        t_axis.push(ti);
        pos.push([state[0], state[1]]);
        yaw.push(state[2]);
        if i + 1 == n {
            break;
        }
        for k in 0..INTEGRATOR_SUBSTEPS {
            let t0 = ti + k as f64 * h;
            let k1 = deriv(t0, &state);
            let s2 = add_scaled(&state, &k1, h / 2.0);
            let k2 = deriv(t0 + h / 2.0, &s2);
            let s3 = add_scaled(&state, &k2, h / 2.0);
            let k3 = deriv(t0 + h / 2.0, &s3);
            let s4 = add_scaled(&state, &k3, h);
            let k4 = deriv(t0 + h, &s4);
            for j in 0..3 {
                state[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
    }
    Ok(Trajectory { t: t_axis, pos, yaw })
}

fn add_scaled(s: &[f64; 3], d: &[f64; 3], h: f64) -> [f64; 3] {
    [s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2]]
}

/// Second-order finite-difference derivative of a sampled signal
/// (centered inside, one-sided at the ends).
fn fd_derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = if i == 0 {
            (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
        } else if i == n - 1 {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt)
        } else {
            (values[i + 1] - values[i - 1]) / (2.0 * dt)
        };
    }
    out
}

/// Simulates body-frame IMU measurements along a trajectory.
///
/// World acceleration and yaw rate come from second-order finite differences
/// of the sampled path; the accelerometer reads specific force
/// `R(yaw)ᵀ (a_world − g_world)` with `g_world = (0, 0, -9.81)`, the gyro
/// reads the yaw rate about the body z axis, and i.i.d. Gaussian noise with
/// the configured standard deviations is added. Ground-truth quaternion and
/// position are attached to every sample.
pub fn simulate_imu(traj: &Trajectory, spec: &TrajectorySpec) -> Result<ImuSequence, SynthError> {
    spec.validate()?;
    let n = traj.len();
    if n < 3 {
        return Err(SynthError::Size(format!(
            "need at least 3 samples for second-derivative estimation, got {n}"
        )));
    }
    let dt = 1.0 / spec.rate;
    let px: Vec<f64> = traj.pos.iter().map(|p| p[0]).collect();
    let py: Vec<f64> = traj.pos.iter().map(|p| p[1]).collect();
    let vx = fd_derivative(&px, dt);
    let vy = fd_derivative(&py, dt);
    let ax = fd_derivative(&vx, dt);
    let ay = fd_derivative(&vy, dt);
    let yaw_rate = fd_derivative(&traj.yaw, dt);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1); // stream 0 feeds trajectory generation
    let noise = |rng: &mut ChaCha8Rng, std: f64| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, std).unwrap().sample(rng)
        }
    };

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let yaw = traj.yaw[i];
        let (c, s) = (yaw.cos(), yaw.sin());
        // specific force in world: a_world - g_world, with g = (0,0,-G)
        let f_world = [ax[i], ay[i], GRAVITY];
        // body = R_z(yaw)^T * world
        let acce = [
            c * f_world[0] + s * f_world[1] + noise(&mut rng, spec.noise_acce),
            -s * f_world[0] + c * f_world[1] + noise(&mut rng, spec.noise_acce),
            f_world[2] + noise(&mut rng, spec.noise_acce),
        ];
        let gyro = [
            noise(&mut rng, spec.noise_gyro),
            noise(&mut rng, spec.noise_gyro),
            yaw_rate[i] + noise(&mut rng, spec.noise_gyro),
        ];
        let half = yaw / 2.0;
        samples.push(ImuSample {
            t: traj.t[i],
            gyro,
            acce,
            quat: Some([half.cos(), 0.0, 0.0, half.sin()]),
            pos: Some([traj.pos[i][0], traj.pos[i][1], 0.0]),
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), "synth_world".into());
    meta.insert("seed".into(), spec.seed.to_string());
    Ok(ImuSequence::new(samples, spec.rate, Frame::Body, meta)?)
}

/// Residuals between double-integrated world-frame acceleration and the
/// ground-truth positions.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    pub max_residual: f64,
    pub rms_residual: f64,
}

/// Double-integrates the sequence's acceleration (rotated to world, gravity
/// removed) with the trapezoid rule and reports position residuals against
/// the trajectory. Initial position and velocity are seeded from ground
/// truth. Intended for zero-noise sequences.
pub fn verify_consistency(seq: &ImuSequence, traj: &Trajectory) -> ConsistencyReport {
    let n = seq.len().min(traj.len());
    let dt_of = |i: usize| seq.samples[i + 1].t - seq.samples[i].t;
    // world-frame horizontal acceleration
    let mut acc = Vec::with_capacity(n);
    for s in &seq.samples[..n] {
        let q = s.quat.expect("consistency check needs orientation");
        let yaw = 2.0 * q[3].atan2(q[0]);
        let (c, si) = (yaw.cos(), yaw.sin());
        let a_world = [
            c * s.acce[0] - si * s.acce[1],
            si * s.acce[0] + c * s.acce[1],
        ];
        acc.push(a_world);
    }
    let dt0 = dt_of(0);
    let mut v = [
        (-3.0 * traj.pos[0][0] + 4.0 * traj.pos[1][0] - traj.pos[2][0]) / (2.0 * dt0),
        (-3.0 * traj.pos[0][1] + 4.0 * traj.pos[1][1] - traj.pos[2][1]) / (2.0 * dt0),
    ];
    let mut p = traj.pos[0];
    let mut max_r = 0.0f64;
    let mut sum_sq = 0.0f64;
    for i in 0..n {
        let r = ((p[0] - traj.pos[i][0]).powi(2) + (p[1] - traj.pos[i][1]).powi(2)).sqrt();
        max_r = max_r.max(r);
        sum_sq += r * r;
        if i + 1 == n {
            break;
        }
        let dt = dt_of(i);
        let v_next = [
            v[0] + 0.5 * (acc[i][0] + acc[i + 1][0]) * dt,
            v[1] + 0.5 * (acc[i][1] + acc[i + 1][1]) * dt,
        ];
        p = [
            p[0] + 0.5 * (v[0] + v_next[0]) * dt,
            p[1] + 0.5 * (v[1] + v_next[1]) * dt,
        ];
        v = v_next;
    }
    ConsistencyReport {
        max_residual: max_r,
        rms_residual: (sum_sq / n as f64).sqrt(),
    }
}

/// A batch of trajectory specs sharing one master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_trajectories: usize,
    pub duration: f64,
    pub rate: f64,
    pub speed_range: (f64, f64),
    pub turn_rate_max: f64,
    pub noise_acce: f64,
    pub noise_gyro: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_trajectories == 0 {
            return Err(SynthError::Spec {
                field: "n_trajectories",
                message: "must be >= 1".into(),
            });
        }
        self.trajectory_spec(0).validate()
    }

    /// Per-trajectory spec with an RNG stream derived from (seed, index).
    pub fn trajectory_spec(&self, index: usize) -> TrajectorySpec {
        TrajectorySpec {
            duration: self.duration,
            rate: self.rate,
            speed_range: self.speed_range,
            turn_rate_max: self.turn_rate_max,
            noise_acce: self.noise_acce,
            noise_gyro: self.noise_gyro,
            seed: mix_seed(self.seed, index as u64),
        }
    }

    /// Desk-scale default: 200 trajectories of 60 s at 100 Hz.
    pub fn default_desk(seed: u64) -> Self {
        Self {
            n_trajectories: 200,
            duration: 60.0,
            rate: 100.0,
            speed_range: (0.4, 1.6),
            turn_rate_max: 1.2,
            noise_acce: 0.05,
            noise_gyro: 0.005,
            seed,
        }
    }
}

/// splitmix64 finalizer over (seed, index)
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generated trajectory with its id and IMU stream.
pub struct CorpusItem {
    pub id: String,
    pub spec: TrajectorySpec,
    pub trajectory: Trajectory,
    pub sequence: ImuSequence,
}

/// Generates the whole corpus in memory. Items are independent given
/// (seed, index), so order of generation cannot change results.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusItem>, SynthError> {
    spec.validate()?;
    (0..spec.n_trajectories)
        .map(|i| {
            let tspec = spec.trajectory_spec(i);
            let trajectory = gen_trajectory(&tspec)?;
            let sequence = simulate_imu(&trajectory, &tspec)?;
            Ok(CorpusItem {
                id: format!("traj_{i:04}"),
                spec: tspec,
                trajectory,
                sequence,
            })
        })
        .collect()
}

/// `corpus.json` schema: the generating spec plus per-trajectory ids/seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub spec: CorpusSpec,
    pub trajectories: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: u64,
}

/// Writes every trajectory as a canonical dataset directory under `out_dir`
/// plus a `corpus.json` manifest; returns the manifest.
pub fn write_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifest, SynthError> {
    let items = generate_corpus(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        save_canonical(&item.sequence, &out_dir.join(&item.id))?;
        entries.push(CorpusEntry {
            id: item.id.clone(),
            seed: item.spec.seed,
        });
    }
    let manifest = CorpusManifest {
        version: 1,
        spec: spec.clone(),
        trajectories: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("corpus.json"), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec(seed: u64) -> TrajectorySpec {
        TrajectorySpec {
            duration: 4.0,
            rate: 100.0,
            speed_range: (0.5, 1.5),
            turn_rate_max: 1.0,
            noise_acce: 0.0,
            noise_gyro: 0.0,
            seed,
        }
    }

    #[test]
    fn degenerate_spec_gives_straight_line() {
        let spec = TrajectorySpec {
            speed_range: (1.0, 1.0),
            turn_rate_max: 0.0,
            ..quick_spec(3)
        };
        let traj = gen_trajectory(&spec).unwrap();
        let yaw0 = traj.yaw[0];
        for (i, (p, y)) in traj.pos.iter().zip(&traj.yaw).enumerate() {
            let t = traj.t[i];
            assert!((y - yaw0).abs() < 1e-12);
            assert!((p[0] - t * yaw0.cos()).abs() < 1e-9, "i={i}");
            assert!((p[1] - t * yaw0.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let spec = quick_spec(77);
        let a = gen_trajectory(&spec).unwrap();
        let b = gen_trajectory(&spec).unwrap();
        assert_eq!(a, b);
        let seq_a = simulate_imu(&a, &spec).unwrap();
        let seq_b = simulate_imu(&b, &spec).unwrap();
        assert_eq!(seq_a, seq_b);
    }

    #[test]
    fn stationary_trajectory_measures_gravity_only() {
        let spec = TrajectorySpec {
            speed_range: (0.0, 0.0),
            turn_rate_max: 0.0,
            ..quick_spec(5)
        };
        let traj = gen_trajectory(&spec).unwrap();
        let seq = simulate_imu(&traj, &spec).unwrap();
        for s in &seq.samples {
            assert!(s.acce[0].abs() < 1e-9);
            assert!(s.acce[1].abs() < 1e-9);
            assert!((s.acce[2] - GRAVITY).abs() < 1e-9);
            assert!(s.gyro.iter().all(|g| g.abs() < 1e-9));
        }
    }

    #[test]
    fn circle_acceleration_is_centripetal() {
        let (r, v, rate) = (5.0, 1.0, 100.0);
        let omega = v / r;
        let n = 2000;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let traj = Trajectory {
            pos: t
                .iter()
                .map(|&ti| [r * (omega * ti).cos(), r * (omega * ti).sin()])
                .collect(),
            yaw: t
                .iter()
                .map(|&ti| omega * ti + std::f64::consts::FRAC_PI_2)
                .collect(),
            t,
        };
        let spec = TrajectorySpec {
            duration: n as f64 / rate,
            ..quick_spec(0)
        };
        let seq = simulate_imu(&traj, &spec).unwrap();
        for s in &seq.samples[2..n - 2] {
            let horiz = (s.acce[0] * s.acce[0] + s.acce[1] * s.acce[1]).sqrt();
            let expect = v * v / r;
            assert!((horiz - expect).abs() / expect < 0.01);
        }
    }

    #[test]
    fn straight_line_double_integration_is_exact() {
        let spec = TrajectorySpec {
            speed_range: (1.0, 1.0),
            turn_rate_max: 0.0,
            ..quick_spec(11)
        };
        let traj = gen_trajectory(&spec).unwrap();
        let seq = simulate_imu(&traj, &spec).unwrap();
        let report = verify_consistency(&seq, &traj);
        assert!(report.max_residual < 1e-6, "{report:?}");
    }

    #[test]
    fn noise_strictly_increases_residual() {
        let clean_spec = quick_spec(21);
        let traj = gen_trajectory(&clean_spec).unwrap();
        let clean = verify_consistency(&simulate_imu(&traj, &clean_spec).unwrap(), &traj);
        let noisy_spec = TrajectorySpec {
            noise_acce: 0.1,
            noise_gyro: 0.01,
            ..clean_spec
        };
        let noisy = verify_consistency(&simulate_imu(&traj, &noisy_spec).unwrap(), &traj);
        assert!(noisy.rms_residual > clean.rms_residual);
    }

    #[test]
    fn invalid_spec_reports_field() {
        let spec = TrajectorySpec {
            duration: -1.0,
            ..quick_spec(0)
        };
        match gen_trajectory(&spec) {
            Err(SynthError::Spec { field, .. }) => assert_eq!(field, "duration"),
            other => panic!("expected spec error, got {other:?}"),
        }
    }

    #[test]
    fn too_short_trajectory_for_simulation() {
        let traj = Trajectory {
            t: vec![0.0, 0.01],
            pos: vec![[0.0, 0.0], [0.01, 0.0]],
            yaw: vec![0.0, 0.0],
        };
        assert!(matches!(
            simulate_imu(&traj, &quick_spec(0)),
            Err(SynthError::Size(_))
        ));
    }
}
