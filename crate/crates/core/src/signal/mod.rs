//! Joint trajectories, preprocessing (filtering, gap filling, normalization
//! onto a common grid) and biomechanical features.

mod events;
mod filter;

use std::fmt;
use std::ops::Range;

use serde::Serialize;

pub use events::{
    detect_events, phase_durations, side_phase_durations, CyclePhases, EventConfig, GaitEvents,
    PhaseDurations, SideEvents, SidePhases,
};
pub use filter::{butterworth_lowpass, filtfilt, lowpass, Biquad};

use crate::error::{Error, Result};

/// Capture rate of the trajectories.
pub const SAMPLE_RATE_HZ: f64 = 30.0;
/// Points on the normalized cycle grid.
pub const DEFAULT_GRID_POINTS: usize = 400;
pub const DEFAULT_CUTOFF_HZ: f64 = 6.0;
pub const DEFAULT_FILTER_ORDER: usize = 4;
/// Shortest cycle accepted by [`normalize_and_align`].
pub const MIN_CYCLE_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Joint {
    Hip,
    Knee,
    Ankle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

impl Joint {
    pub const ALL: [Joint; 3] = [Joint::Hip, Joint::Knee, Joint::Ankle];

    pub fn name(self) -> &'static str {
        match self {
            Joint::Hip => "hip",
            Joint::Knee => "knee",
            Joint::Ankle => "ankle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|j| j.name() == s)
    }
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Right, Side::Left];

    pub fn name(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// A modeled signal: the vertical displacement of one joint on one side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Channel {
    pub joint: Joint,
    pub side: Side,
}

/// Channel order used everywhere a six-vector of signals appears.
pub const CHANNELS: [Channel; 6] = [
    Channel {
        joint: Joint::Hip,
        side: Side::Right,
    },
    Channel {
        joint: Joint::Hip,
        side: Side::Left,
    },
    Channel {
        joint: Joint::Knee,
        side: Side::Right,
    },
    Channel {
        joint: Joint::Knee,
        side: Side::Left,
    },
    Channel {
        joint: Joint::Ankle,
        side: Side::Right,
    },
    Channel {
        joint: Joint::Ankle,
        side: Side::Left,
    },
];
pub const ANKLE_RIGHT: usize = 4;
pub const ANKLE_LEFT: usize = 5;

impl Channel {
    pub fn index(self) -> usize {
        CHANNELS
            .iter()
            .position(|c| *c == self)
            .expect("all channels are listed")
    }

    pub fn label(self) -> String {
        format!("{}_{}", self.joint.name(), self.side.name())
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.joint.name(), self.side.name())
    }
}

pub fn channel_labels() -> Vec<String> {
    CHANNELS.iter().map(|c| c.label()).collect()
}

/// 3D displacement samples of one joint at [`SAMPLE_RATE_HZ`]. Gaps are
/// non-finite coordinates until [`impute_missing`] removes them.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTrajectory3D {
    pub joint: Joint,
    pub side: Side,
    pub samples: Vec<[f64; 3]>,
}

impl JointTrajectory3D {
    pub fn new(joint: Joint, side: Side, samples: Vec<[f64; 3]>) -> Self {
        Self {
            joint,
            side,
            samples,
        }
    }

    pub fn channel(&self) -> Channel {
        Channel {
            joint: self.joint,
            side: self.side,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[axis]).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.axis(1)
    }

    fn with_axes(&self, axes: [Vec<f64>; 3]) -> Self {
        let samples = (0..self.samples.len())
            .map(|i| [axes[0][i], axes[1][i], axes[2][i]])
            .collect();
        Self {
            joint: self.joint,
            side: self.side,
            samples,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.samples.iter().flatten().all(|v| v.is_finite())
    }

    /// Checks the post-imputation contract: at least two samples, all finite.
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::invalid(format!(
                "{} trajectory needs at least 2 samples, got {}",
                self.channel(),
                self.samples.len()
            )));
        }
        if !self.is_complete() {
            return Err(Error::invalid(format!(
                "{} trajectory has non-finite samples",
                self.channel()
            )));
        }
        Ok(())
    }
}

/// Zero-phase Butterworth low-pass applied to every axis.
pub fn lowpass_filter(
    traj: &JointTrajectory3D,
    cutoff_hz: f64,
    order: usize,
) -> Result<JointTrajectory3D> {
    if ![2, 4, 6].contains(&order) {
        return Err(Error::invalid(format!(
            "filter order must be 2, 4 or 6, got {order}"
        )));
    }
    traj.validate()?;
    let sections = butterworth_lowpass(order, cutoff_hz, SAMPLE_RATE_HZ)?;
    Ok(traj.with_axes(std::array::from_fn(|a| filtfilt(&sections, &traj.axis(a)))))
}

/// Fills non-finite runs of one signal: linear interpolation between the
/// neighbouring valid samples, nearest-value hold at either end.
pub fn impute_signal(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut out = x.to_vec();
    let mut i = 0;
    while i < n {
        if x[i].is_finite() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !x[i].is_finite() {
            i += 1;
        }
        let run = i - start;
        if 3 * run >= n {
            return Err(Error::invalid(format!(
                "gap of {run} samples at index {start} covers a third or more of the {n}-sample sequence; exclude this cycle"
            )));
        }
        match (start.checked_sub(1).map(|j| x[j]), x.get(i).copied()) {
            (Some(a), Some(b)) => {
                let span = (run + 1) as f64;
                for (k, v) in out[start..i].iter_mut().enumerate() {
                    let w = (k + 1) as f64 / span;
                    *v = a + w * (b - a);
                }
            }
            (Some(a), None) => out[start..i].fill(a),
            (None, Some(b)) => out[start..i].fill(b),
            (None, None) => unreachable!("a gap covering everything is rejected above"),
        }
    }
    Ok(out)
}

/// Gap filling per axis; see [`impute_signal`].
pub fn impute_missing(traj: &JointTrajectory3D) -> Result<JointTrajectory3D> {
    let mut axes: [Vec<f64>; 3] = Default::default();
    for (a, slot) in axes.iter_mut().enumerate() {
        *slot = impute_signal(&traj.axis(a)).map_err(|e| match e {
            Error::InvalidInput(msg) => {
                Error::invalid(format!("{} axis {a}: {msg}", traj.channel()))
            }
            other => other,
        })?;
    }
    Ok(traj.with_axes(axes))
}

/// `n` points uniform on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Linear resampling of a signal whose samples span `[0, 1]` uniformly.
pub fn resample_linear(x: &[f64], points: usize) -> Vec<f64> {
    let n = x.len();
    if n == points {
        return x.to_vec();
    }
    let last = (n - 1) as f64;
    unit_grid(points)
        .into_iter()
        .map(|t| {
            let pos = t * last;
            let i = (pos.floor() as usize).min(n - 2);
            let w = pos - i as f64;
            x[i] + w * (x[i + 1] - x[i])
        })
        .collect()
}

/// Linear interpolation of `(times, values)` at `t`, clamped at the ends.
pub fn interpolate_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let j = times.partition_point(|&s| s <= t).clamp(1, n - 1);
    let w = (t - times[j - 1]) / (times[j] - times[j - 1]);
    values[j - 1] + w * (values[j] - values[j - 1])
}

/// Six y-signals of one cycle on the uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub subject_id: String,
    pub cycle: usize,
    pub grid: Vec<f64>,
    /// Indexed as [`CHANNELS`].
    pub channels: [Vec<f64>; 6],
}

impl TrajectorySet {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if n < 2 {
            return Err(Error::invalid(
                "trajectory set needs at least 2 grid points",
            ));
        }
        for (i, t) in self.grid.iter().enumerate() {
            if (t - i as f64 / (n - 1) as f64).abs() > 1e-12 {
                return Err(Error::invalid("trajectory grid must be uniform on [0, 1]"));
            }
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.len() != n {
                return Err(Error::LengthMismatch {
                    what: "channel vs grid",
                    left: ch.len(),
                    right: n,
                });
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "channel {} has non-finite values",
                    CHANNELS[c]
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel affine map between raw and normalized units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelScaling {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl ChannelScaling {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 6],
            std: [1.0; 6],
        }
    }

    pub fn to_raw(&self, channel: usize, z: f64) -> f64 {
        self.mean[channel] + self.std[channel] * z
    }

    pub fn to_normalized(&self, channel: usize, raw: f64) -> f64 {
        (raw - self.mean[channel]) / self.std[channel]
    }
}

/// One subject's cycles after normalization, with the scaling that undoes it.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSubject {
    pub sets: Vec<TrajectorySet>,
    pub scaling: ChannelScaling,
}

/// Resamples every cycle onto a `points`-point uniform grid, then z-scores
/// each channel over the subject's pooled resampled cycles (population
/// standard deviation).
pub fn normalize_and_align(
    subject_id: &str,
    cycles: &[[Vec<f64>; 6]],
    points: usize,
) -> Result<NormalizedSubject> {
    if cycles.is_empty() {
        return Err(Error::invalid(format!(
            "subject {subject_id} has no cycles"
        )));
    }
    if points < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    let mut resampled: Vec<[Vec<f64>; 6]> = Vec::with_capacity(cycles.len());
    for (k, cycle) in cycles.iter().enumerate() {
        for (c, ch) in cycle.iter().enumerate() {
            if ch.len() < MIN_CYCLE_SAMPLES {
                return Err(Error::invalid(format!(
                    "subject {subject_id} cycle {k} channel {}: {} samples, need at least {MIN_CYCLE_SAMPLES}",
                    CHANNELS[c],
                    ch.len()
                )));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "subject {subject_id} cycle {k} channel {} has non-finite values",
                    CHANNELS[c]
                )));
            }
        }
        resampled.push(std::array::from_fn(|c| resample_linear(&cycle[c], points)));
    }
    let total = (resampled.len() * points) as f64;
    let mut scaling = ChannelScaling::identity();
    for c in 0..6 {
        let mean = resampled.iter().flat_map(|r| r[c].iter()).sum::<f64>() / total;
        let var = resampled
            .iter()
            .flat_map(|r| r[c].iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / total;
        let std = var.sqrt();
        if std.is_nan() || std <= 1e-12 * (1.0 + mean.abs()) {
            return Err(Error::invalid(format!(
                "subject {subject_id} channel {} has zero variance",
                CHANNELS[c]
            )));
        }
        scaling.mean[c] = mean;
        scaling.std[c] = std;
    }
    let grid = unit_grid(points);
    let sets = resampled
        .into_iter()
        .enumerate()
        .map(|(k, r)| TrajectorySet {
            subject_id: subject_id.to_string(),
            cycle: k,
            grid: grid.clone(),
            channels: std::array::from_fn(|c| {
                r[c].iter()
                    .map(|v| (v - scaling.mean[c]) / scaling.std[c])
                    .collect()
            }),
        })
        .collect();
    Ok(NormalizedSubject { sets, scaling })
}

/// Inner knee angle in degrees between `hip − knee` and `ankle − knee`
/// (180° for a straight leg).
pub fn knee_angle(hip: &[[f64; 3]], knee: &[[f64; 3]], ankle: &[[f64; 3]]) -> Result<Vec<f64>> {
    if hip.len() != knee.len() || knee.len() != ankle.len() {
        return Err(Error::LengthMismatch {
            what: "hip/knee/ankle samples",
            left: hip.len(),
            right: if hip.len() != knee.len() {
                knee.len()
            } else {
                ankle.len()
            },
        });
    }
    hip.iter()
        .zip(knee)
        .zip(ankle)
        .enumerate()
        .map(|(i, ((h, k), a))| {
            let u = [h[0] - k[0], h[1] - k[1], h[2] - k[2]];
            let v = [a[0] - k[0], a[1] - k[1], a[2] - k[2]];
            let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if !(nu > 1e-9 && nv > 1e-9) {
                return Err(Error::DegenerateSegment { index: i });
            }
            let cos = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
            Ok(cos.clamp(-1.0, 1.0).acos().to_degrees())
        })
        .collect()
}

/// Knee angle from trajectories of one side.
pub fn knee_angle_trajectories(
    hip: &JointTrajectory3D,
    knee: &JointTrajectory3D,
    ankle: &JointTrajectory3D,
) -> Result<Vec<f64>> {
    if (hip.joint, knee.joint, ankle.joint) != (Joint::Hip, Joint::Knee, Joint::Ankle) {
        return Err(Error::invalid(
            "knee angle needs hip, knee and ankle trajectories",
        ));
    }
    if hip.side != knee.side || knee.side != ankle.side {
        return Err(Error::invalid(
            "knee angle trajectories must come from one side",
        ));
    }
    knee_angle(&hip.samples, &knee.samples, &ankle.samples)
}

/// Splits a continuous recording into cycles at detected heel strikes of
/// `ankle_y`. Each range runs from one heel strike to the next, inclusive of
/// both endpoints.
pub fn split_cycles(ankle_y: &[f64], config: &EventConfig) -> Result<Vec<Range<usize>>> {
    let n = ankle_y.len();
    let events = detect_events(ankle_y, config)?;
    let last = (n - 1) as f64;
    let strikes: Vec<usize> = events
        .heel_strikes
        .iter()
        .map(|t| (t * last).round() as usize)
        .collect();
    Ok(strikes.windows(2).map(|w| w[0]..w[1] + 1).collect())
}
