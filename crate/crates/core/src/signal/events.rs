//! Heel-strike / toe-off detection from ankle height and the stance/swing
//! durations they delimit.

use serde::Serialize;

use crate::error::{Error, Result};

/// Peak-picking thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventConfig {
    /// Minimum prominence as a fraction of the signal's peak-to-peak range.
    pub prominence_fraction: f64,
    /// Minimum spacing between events of the same kind, in normalized time.
    pub min_spacing: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            prominence_fraction: 0.2,
            min_spacing: 0.15,
        }
    }
}

/// Events for one ankle, as times on `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SideEvents {
    pub heel_strikes: Vec<f64>,
    pub toe_offs: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GaitEvents {
    pub right: SideEvents,
    pub left: SideEvents,
}

/// Local maxima indices (plateaus reported at their middle sample).
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Topographic prominence of each peak.
fn prominences(x: &[f64], peaks: &[usize]) -> Vec<f64> {
    peaks
        .iter()
        .map(|&p| {
            let h = x[p];
            let mut left_min = h;
            for i in (0..p).rev() {
                if x[i] > h {
                    break;
                }
                left_min = left_min.min(x[i]);
            }
            let mut right_min = h;
            for &v in &x[p + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            h - left_min.max(right_min)
        })
        .collect()
}

/// Peaks passing the prominence threshold, thinned so that no two retained
/// peaks are closer than `min_distance` samples (higher peaks win).
fn select_peaks(x: &[f64], min_prominence: f64, min_distance: f64) -> Vec<usize> {
    let peaks = local_maxima(x);
    let prom = prominences(x, &peaks);
    let candidates: Vec<usize> = peaks
        .into_iter()
        .zip(prom)
        .filter(|(_, p)| *p >= min_prominence)
        .map(|(i, _)| i)
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        x[candidates[b]]
            .total_cmp(&x[candidates[a]])
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; candidates.len()];
    for &k in &order {
        if !keep[k] {
            continue;
        }
        for (j, flag) in keep.iter_mut().enumerate() {
            if j != k && ((candidates[j] as f64) - (candidates[k] as f64)).abs() < min_distance {
                *flag = false;
            }
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    HeelStrike,
    ToeOff,
}

/// Heel strikes at prominent local minima and toe-offs at prominent local
/// maxima of `ankle_y`, sampled uniformly on `[0, 1]`. Consecutive events of
/// the same kind are collapsed to the more extreme one, so the merged
/// sequence alternates.
pub fn detect_events(ankle_y: &[f64], config: &EventConfig) -> Result<SideEvents> {
    let n = ankle_y.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "event detection needs at least 5 samples, got {n}"
        )));
    }
    if ankle_y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("ankle signal must be finite"));
    }
    let (lo, hi) = ankle_y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let ptp = hi - lo;
    if ptp < 1e-9 {
        return Ok(SideEvents::default());
    }
    let step = 1.0 / (n - 1) as f64;
    let min_prominence = config.prominence_fraction * ptp;
    let min_distance = config.min_spacing / step;
    let negated: Vec<f64> = ankle_y.iter().map(|v| -v).collect();

    let mut events: Vec<(usize, Kind)> = select_peaks(ankle_y, min_prominence, min_distance)
        .into_iter()
        .map(|i| (i, Kind::ToeOff))
        .chain(
            select_peaks(&negated, min_prominence, min_distance)
                .into_iter()
                .map(|i| (i, Kind::HeelStrike)),
        )
        .collect();
    events.sort_by_key(|e| e.0);

    let mut merged: Vec<(usize, Kind)> = Vec::with_capacity(events.len());
    for e in events {
        match merged.last_mut() {
            Some(last) if last.1 == e.1 => {
                let better = match e.1 {
                    Kind::ToeOff => ankle_y[e.0] > ankle_y[last.0],
                    Kind::HeelStrike => ankle_y[e.0] < ankle_y[last.0],
                };
                if better {
                    *last = e;
                }
            }
            _ => merged.push(e),
        }
    }
    let mut out = SideEvents::default();
    for (i, kind) in merged {
        let t = i as f64 * step;
        match kind {
            Kind::HeelStrike => out.heel_strikes.push(t),
            Kind::ToeOff => out.toe_offs.push(t),
        }
    }
    Ok(out)
}

/// One complete heel-strike → toe-off → heel-strike cycle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CyclePhases {
    pub heel_strike: f64,
    pub toe_off: f64,
    pub next_heel_strike: f64,
    pub stance: f64,
    pub swing: f64,
}

/// Stance and swing durations for one side, in time order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SidePhases {
    /// Heel strike → next toe-off.
    pub stance: Vec<f64>,
    /// Toe-off → next heel strike.
    pub swing: Vec<f64>,
    pub cycles: Vec<CyclePhases>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseDurations {
    pub right: SidePhases,
    pub left: SidePhases,
}

/// Stance/swing durations from alternating events.
pub fn side_phase_durations(events: &SideEvents) -> Result<SidePhases> {
    let mut merged: Vec<(f64, Kind)> = events
        .heel_strikes
        .iter()
        .map(|&t| (t, Kind::HeelStrike))
        .chain(events.toe_offs.iter().map(|&t| (t, Kind::ToeOff)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let offending: Vec<usize> = merged
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].1 == w[1].1 || w[0].0 == w[1].0)
        .map(|(i, _)| i + 1)
        .collect();
    if !offending.is_empty() {
        return Err(Error::invalid(format!(
            "events do not alternate at merged indices {offending:?}"
        )));
    }
    let has_pair = merged
        .windows(2)
        .any(|w| w[0].1 == Kind::HeelStrike && w[1].1 == Kind::ToeOff);
    if !has_pair {
        return Err(Error::invalid(
            "need at least one heel strike followed by a toe-off",
        ));
    }
    let mut out = SidePhases {
        stance: Vec::new(),
        swing: Vec::new(),
        cycles: Vec::new(),
    };
    for (i, w) in merged.windows(2).enumerate() {
        let d = w[1].0 - w[0].0;
        match w[0].1 {
            Kind::HeelStrike => {
                out.stance.push(d);
                if let Some(next) = merged.get(i + 2) {
                    out.cycles.push(CyclePhases {
                        heel_strike: w[0].0,
                        toe_off: w[1].0,
                        next_heel_strike: next.0,
                        stance: d,
                        swing: next.0 - w[1].0,
                    });
                }
            }
            Kind::ToeOff => out.swing.push(d),
        }
    }
    Ok(out)
}

pub fn phase_durations(events: &GaitEvents) -> Result<PhaseDurations> {
    Ok(PhaseDurations {
        right: side_phase_durations(&events.right)?,
        left: side_phase_durations(&events.left)?,
    })
}
