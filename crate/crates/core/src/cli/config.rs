//! Run configuration: defaults, flat config files and `--set` overrides.

use std::path::Path;

use crate::dataio::{AnomalySpec, SynthConfig};
use crate::error::{Error, Result};
use crate::hmm::EmConfig;
use crate::kv::KvDocument;
use crate::mogp::OptimizerConfig;
use crate::pipeline::{FitScope, HmmScheme, PreprocessConfig, SegmentConfig};
use crate::signal::{EventConfig, Side};

/// Metrics written by `evaluate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricToggles {
    pub mae: bool,
    pub r_squared: bool,
    pub adtw: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            mae: true,
            r_squared: true,
            adtw: true,
        }
    }
}

impl MetricToggles {
    /// Whether a metrics-document key survives the toggles.
    pub fn keeps(&self, key: &str) -> bool {
        match key.rsplit('.').next() {
            Some("mae") => self.mae,
            Some("r_squared") => self.r_squared,
            Some("adtw") | Some("dtw") => self.adtw,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub scope: FitScope,
    pub points_per_output: usize,
    pub optimizer: OptimizerConfig,
    pub segment: SegmentConfig,
    pub metrics: MetricToggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            scope: FitScope::Subject,
            points_per_output: 30,
            optimizer: OptimizerConfig::default(),
            segment: SegmentConfig::default(),
            metrics: MetricToggles::default(),
        }
    }
}

/// Every accepted key, with a one-line description for `--help` style output.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for synthetic data and W initialization"),
    ("synth.controls", "control subjects"),
    ("synth.disorders", "disorder subjects"),
    ("synth.cycles", "cycles per subject"),
    ("synth.frames_per_cycle", "nominal frames per cycle"),
    ("synth.frame_jitter", "cycle length jitter in frames"),
    ("synth.noise", "additive noise SD in meters"),
    ("synth.amplitude_jitter", "relative amplitude jitter"),
    ("synth.phase_jitter", "phase jitter in cycles"),
    ("synth.anomaly_side", "right or left"),
    ("synth.anomaly_start", "anomaly window start in [0,1]"),
    ("synth.anomaly_duration", "anomaly window length in [0,1]"),
    ("synth.anomaly_shift", "anomaly shift in ankle amplitudes"),
    ("preprocess.filter", "apply the low-pass filter"),
    ("preprocess.cutoff_hz", "filter cutoff"),
    ("preprocess.filter_order", "filter order: 2, 4 or 6"),
    (
        "preprocess.grid_points",
        "points on the normalized cycle grid",
    ),
    ("fit.scope", "subject, pooled or loso"),
    ("fit.points_per_output", "training points per channel"),
    ("fit.iterations", "Adam iterations"),
    ("fit.learning_rate", "Adam learning rate"),
    ("fit.weight_decay", "Adam weight decay"),
    ("fit.rank", "coregionalization rank"),
    ("fit.tolerance", "early-stop LML tolerance"),
    ("fit.patience", "early-stop patience in iterations"),
    ("fit.initial_noise", "initial noise variance"),
    ("hmm.scheme", "loso or pooled"),
    ("hmm.em_iterations", "Baum-Welch iterations"),
    ("hmm.em_tolerance", "Baum-Welch relative tolerance"),
    (
        "hmm.freeze_transitions",
        "keep initial and transition probabilities fixed",
    ),
    (
        "hmm.constrain_controls",
        "restrict control sequences to normal states",
    ),
    (
        "hmm.control_run_factor",
        "decision-rule factor on control run lengths",
    ),
    ("hmm.min_run_samples", "shortest reported abnormal run"),
    (
        "events.prominence_fraction",
        "extremum prominence as a fraction of peak-to-peak",
    ),
    ("events.min_spacing", "minimum spacing of same-kind events"),
    (
        "events.cycles",
        "average-cycle copies used for event detection",
    ),
    ("metrics", "subset of: mae r_squared adtw"),
];

fn bad(key: &str, raw: &str, expected: &str) -> Error {
    Error::invalid(format!(
        "config key {key}: expected {expected}, found {raw:?}"
    ))
}

fn num<T: std::str::FromStr>(key: &str, raw: &str, expected: &str) -> Result<T> {
    raw.parse().map_err(|_| bad(key, raw, expected))
}

fn real(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = num(key, raw, "a number")?;
    if !v.is_finite() {
        return Err(bad(key, raw, "a finite number"));
    }
    Ok(v)
}

fn positive(key: &str, raw: &str) -> Result<f64> {
    let v = real(key, raw)?;
    if v <= 0.0 {
        return Err(bad(key, raw, "a positive number"));
    }
    Ok(v)
}

fn non_negative(key: &str, raw: &str) -> Result<f64> {
    let v = real(key, raw)?;
    if v < 0.0 {
        return Err(bad(key, raw, "a non-negative number"));
    }
    Ok(v)
}

fn fraction(key: &str, raw: &str) -> Result<f64> {
    let v = real(key, raw)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(bad(key, raw, "a number in [0, 1]"));
    }
    Ok(v)
}

fn count(key: &str, raw: &str) -> Result<usize> {
    num(key, raw, "a non-negative integer")
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, raw, "true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        match key {
            "seed" => {
                let seed: u64 = num(key, raw, "an unsigned integer")?;
                self.synth.seed = seed;
                self.optimizer.seed = seed;
            }
            "synth.controls" => self.synth.control_subjects = count(key, raw)?,
            "synth.disorders" => self.synth.disorder_subjects = count(key, raw)?,
            "synth.cycles" => self.synth.cycles_per_subject = count(key, raw)?,
            "synth.frames_per_cycle" => self.synth.frames_per_cycle = count(key, raw)?,
            "synth.frame_jitter" => self.synth.frame_jitter = count(key, raw)?,
            "synth.noise" => self.synth.noise_level = non_negative(key, raw)?,
            "synth.amplitude_jitter" => self.synth.amplitude_jitter = fraction(key, raw)?,
            "synth.phase_jitter" => self.synth.phase_jitter = fraction(key, raw)?,
            "synth.anomaly_side" => {
                self.synth.anomaly.side =
                    Side::parse(raw).ok_or_else(|| bad(key, raw, "right or left"))?
            }
            "synth.anomaly_start" => self.synth.anomaly.start = fraction(key, raw)?,
            "synth.anomaly_duration" => self.synth.anomaly.duration_fraction = fraction(key, raw)?,
            "synth.anomaly_shift" => self.synth.anomaly.amplitude_shift = real(key, raw)?,
            "preprocess.filter" => self.preprocess.filter = flag(key, raw)?,
            "preprocess.cutoff_hz" => self.preprocess.cutoff_hz = positive(key, raw)?,
            "preprocess.filter_order" => self.preprocess.filter_order = count(key, raw)?,
            "preprocess.grid_points" => self.preprocess.grid_points = count(key, raw)?,
            "fit.scope" => self.scope = FitScope::parse(raw)?,
            "fit.points_per_output" => self.points_per_output = count(key, raw)?,
            "fit.iterations" => self.optimizer.iterations = count(key, raw)?,
            "fit.learning_rate" => self.optimizer.learning_rate = positive(key, raw)?,
            "fit.weight_decay" => self.optimizer.weight_decay = non_negative(key, raw)?,
            "fit.rank" => self.optimizer.rank = count(key, raw)?,
            "fit.tolerance" => self.optimizer.tolerance = non_negative(key, raw)?,
            "fit.patience" => self.optimizer.patience = count(key, raw)?,
            "fit.initial_noise" => self.optimizer.initial_noise = positive(key, raw)?,
            "hmm.scheme" => self.segment.scheme = HmmScheme::parse(raw)?,
            "hmm.em_iterations" => self.segment.em.max_iterations = count(key, raw)?,
            "hmm.em_tolerance" => self.segment.em.tolerance = non_negative(key, raw)?,
            "hmm.freeze_transitions" => self.segment.em.learn_transitions = !flag(key, raw)?,
            "hmm.constrain_controls" => self.segment.constrain_controls = flag(key, raw)?,
            "hmm.control_run_factor" => self.segment.control_run_factor = non_negative(key, raw)?,
            "hmm.min_run_samples" => self.segment.min_run_samples = count(key, raw)?,
            "events.prominence_fraction" => {
                self.segment.events.prominence_fraction = fraction(key, raw)?
            }
            "events.min_spacing" => self.segment.events.min_spacing = fraction(key, raw)?,
            "events.cycles" => self.segment.event_cycles = count(key, raw)?,
            "metrics" => {
                let mut t = MetricToggles {
                    mae: false,
                    r_squared: false,
                    adtw: false,
                };
                for name in raw.split_whitespace() {
                    match name {
                        "mae" => t.mae = true,
                        "r_squared" => t.r_squared = true,
                        "adtw" => t.adtw = true,
                        _ => return Err(bad(key, name, "mae, r_squared or adtw")),
                    }
                }
                self.metrics = t;
            }
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_document(&mut self, doc: &KvDocument) -> Result<()> {
        for (k, v) in doc.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            cfg.apply_document(&KvDocument::read(p)?)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.optimizer.validate()?;
        if !matches!(self.preprocess.filter_order, 2 | 4 | 6) {
            return Err(Error::invalid("preprocess.filter_order must be 2, 4 or 6"));
        }
        if self.preprocess.cutoff_hz >= crate::signal::SAMPLE_RATE_HZ / 2.0 {
            return Err(Error::invalid(
                "preprocess.cutoff_hz must be below the Nyquist frequency",
            ));
        }
        if self.preprocess.grid_points < 2 {
            return Err(Error::invalid("preprocess.grid_points must be at least 2"));
        }
        if self.points_per_output < 2 {
            return Err(Error::invalid("fit.points_per_output must be at least 2"));
        }
        if self.segment.em.max_iterations == 0 {
            return Err(Error::invalid("hmm.em_iterations must be at least 1"));
        }
        if self.segment.event_cycles == 0 {
            return Err(Error::invalid("events.cycles must be at least 1"));
        }
        if self.segment.events.prominence_fraction == 0.0 {
            return Err(Error::invalid(
                "events.prominence_fraction must be positive",
            ));
        }
        Ok(())
    }

    /// The effective configuration as a flat document, loadable with `--config`.
    pub fn to_document(&self) -> KvDocument {
        let mut d = KvDocument::new();
        let s = &self.synth;
        d.set("seed", s.seed.to_string());
        d.set("synth.controls", s.control_subjects.to_string());
        d.set("synth.disorders", s.disorder_subjects.to_string());
        d.set("synth.cycles", s.cycles_per_subject.to_string());
        d.set("synth.frames_per_cycle", s.frames_per_cycle.to_string());
        d.set("synth.frame_jitter", s.frame_jitter.to_string());
        d.set_f64("synth.noise", s.noise_level);
        d.set_f64("synth.amplitude_jitter", s.amplitude_jitter);
        d.set_f64("synth.phase_jitter", s.phase_jitter);
        let AnomalySpec {
            side,
            start,
            duration_fraction,
            amplitude_shift,
        } = s.anomaly;
        d.set("synth.anomaly_side", side.name());
        d.set_f64("synth.anomaly_start", start);
        d.set_f64("synth.anomaly_duration", duration_fraction);
        d.set_f64("synth.anomaly_shift", amplitude_shift);
        let p = &self.preprocess;
        d.set("preprocess.filter", p.filter.to_string());
        d.set_f64("preprocess.cutoff_hz", p.cutoff_hz);
        d.set("preprocess.filter_order", p.filter_order.to_string());
        d.set("preprocess.grid_points", p.grid_points.to_string());
        let o = &self.optimizer;
        d.set("fit.scope", self.scope.name());
        d.set("fit.points_per_output", self.points_per_output.to_string());
        d.set("fit.iterations", o.iterations.to_string());
        d.set_f64("fit.learning_rate", o.learning_rate);
        d.set_f64("fit.weight_decay", o.weight_decay);
        d.set("fit.rank", o.rank.to_string());
        d.set_f64("fit.tolerance", o.tolerance);
        d.set("fit.patience", o.patience.to_string());
        d.set_f64("fit.initial_noise", o.initial_noise);
        let g = &self.segment;
        let EmConfig {
            max_iterations,
            tolerance,
            learn_transitions,
            ..
        } = g.em;
        d.set("hmm.scheme", g.scheme.name());
        d.set("hmm.em_iterations", max_iterations.to_string());
        d.set_f64("hmm.em_tolerance", tolerance);
        d.set("hmm.freeze_transitions", (!learn_transitions).to_string());
        d.set("hmm.constrain_controls", g.constrain_controls.to_string());
        d.set_f64("hmm.control_run_factor", g.control_run_factor);
        d.set("hmm.min_run_samples", g.min_run_samples.to_string());
        let EventConfig {
            prominence_fraction,
            min_spacing,
        } = g.events;
        d.set_f64("events.prominence_fraction", prominence_fraction);
        d.set_f64("events.min_spacing", min_spacing);
        d.set("events.cycles", g.event_cycles.to_string());
        let m = self.metrics;
        let names: Vec<&str> = [(m.mae, "mae"), (m.r_squared, "r_squared"), (m.adtw, "adtw")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        d.set("metrics", names.join(" "));
        d
    }
}
