//! Inertial odometry with frequency-time feature fusion.
//!
//! The crate regresses 2-D velocity from fixed-length IMU windows using a
//! three-stage network (1-D residual backbone, frequency-domain learning
//! with complex MLP layers between forward/inverse DFTs, and a scalar-LSTM
//! time-domain stage), then reconstructs trajectories by integrating the
//! predicted velocities and scores them with ATE/RTE/PDE metrics.
//!
//! Modules:
//! - [`imu_data`]: canonical IMU data model, on-disk format, windowing, splits.
//! - [`synth_world`]: synthetic trajectory generation and IMU simulation.
//! - [`model`]: the network forward/backward pass with ablation toggles.
//! - [`training`]: MSE loss, Adam, plateau LR schedule, gradient checking.
//! - [`evaluation`]: trajectory reconstruction and ATE/RTE/PDE/CDF metrics.
//! - [`commands`]: batch pipeline entry points backing the `ftin` binary.

pub mod commands;
pub mod evaluation;
pub mod imu_data;
pub mod model;
pub mod synth_world;
pub mod training;

pub use imu_data::{ImuSample, ImuSequence, LabeledWindow};
pub use model::{FtinConfig, FtinModel, FtinParams};
pub use synth_world::{Trajectory, TrajectorySpec};
