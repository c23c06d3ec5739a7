//! Cohort-aware HMM training and per-subject segmentation reports.

use serde::Serialize;

use super::{PreparedSubject, SubjectPrediction};
use crate::dataio::Cohort;
use crate::error::{Error, Result};
use crate::hmm::{
    anomalous_segments, baum_welch_fit, default_model, initialize_emissions, viterbi_decode,
    AnomalousSegment, EmConfig, HmmModel, ObservationSequence, ObservationSource, TrainingSequence,
    N_STATES,
};
use crate::signal::{
    detect_events, phase_durations, EventConfig, GaitEvents, PhaseDurations, ANKLE_LEFT,
    ANKLE_RIGHT,
};

pub const REPORT_SCHEMA: &str = "segmentation-v1";

/// How the segmentation HMM is trained when no model file is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HmmScheme {
    /// One HMM per subject, trained on every other subject.
    Loso,
    /// A single HMM trained on all subjects.
    Pooled,
}

impl HmmScheme {
    pub fn name(self) -> &'static str {
        match self {
            HmmScheme::Loso => "loso",
            HmmScheme::Pooled => "pooled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "loso" => Ok(HmmScheme::Loso),
            "pooled" => Ok(HmmScheme::Pooled),
            other => Err(Error::invalid(format!(
                "unknown HMM scheme {other:?}; use loso or pooled"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentConfig {
    pub em: EmConfig,
    pub scheme: HmmScheme,
    /// Restrict control-cohort training sequences to the normal states.
    pub constrain_controls: bool,
    pub events: EventConfig,
    /// Copies of the average cycle laid end to end for event detection.
    pub event_cycles: usize,
    /// An abnormal run is reported only when it is longer than this factor
    /// times the longest abnormal run decoded on the training controls.
    pub control_run_factor: f64,
    /// Minimum reported run length in samples, applied in every scheme.
    pub min_run_samples: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            scheme: HmmScheme::Loso,
            constrain_controls: true,
            events: EventConfig::default(),
            event_cycles: 3,
            control_run_factor: 1.25,
            min_run_samples: 1,
        }
    }
}

/// Bilateral ankle observations: MoGP posterior means when a prediction is
/// given, otherwise the subject's cycle-averaged normalized signals.
pub fn observations_for(
    subject: &PreparedSubject,
    prediction: Option<&SubjectPrediction>,
) -> Result<ObservationSequence> {
    match prediction {
        Some(p) => ObservationSequence::from_channels(
            &p.posterior.mean[ANKLE_RIGHT],
            &p.posterior.mean[ANKLE_LEFT],
            ObservationSource::MogpPredicted,
        ),
        None => {
            let mean = subject.mean_cycle();
            ObservationSequence::from_channels(
                &mean[ANKLE_RIGHT],
                &mean[ANKLE_LEFT],
                ObservationSource::Raw,
            )
        }
    }
}

const NORMAL_ONLY: [bool; N_STATES] = [true, true, false, false];

/// Baum-Welch from data-driven emissions. With `constrain_controls`,
/// control sequences may only visit the normal states, so the abnormal
/// states are left to explain what separates the disorder cohort.
pub fn train_segmentation_hmm(
    training: &[(&ObservationSequence, Cohort)],
    config: &SegmentConfig,
) -> Result<crate::hmm::EmOutcome> {
    let seqs: Vec<&ObservationSequence> = training.iter().map(|(s, _)| *s).collect();
    let init = initialize_emissions(&default_model(), &seqs)?;
    let masked = training.iter().map(|(s, cohort)| TrainingSequence {
        observations: s,
        allowed_states: if config.constrain_controls && *cohort == Cohort::Control {
            NORMAL_ONLY
        } else {
            [true; N_STATES]
        },
    });
    baum_welch_fit(&init, masked, &config.em)
}

fn run_samples(run: &AnomalousSegment) -> usize {
    run.end_index - run.start_index + 1
}

/// Shortest run length the decision rule reports for a model trained on
/// `training`: longer than `control_run_factor` times the longest abnormal
/// run among the control sequences, and at least `min_run_samples`.
pub fn calibrate_min_run(
    model: &HmmModel,
    training: &[(&ObservationSequence, Cohort)],
    config: &SegmentConfig,
) -> Result<usize> {
    let mut longest = 0;
    for (seq, cohort) in training {
        if *cohort != Cohort::Control {
            continue;
        }
        let decoded = viterbi_decode(model, seq)?;
        let grid: Vec<f64> = (0..seq.len()).map(|i| i as f64).collect();
        for run in anomalous_segments(&decoded, &grid)? {
            longest = longest.max(run_samples(&run));
        }
    }
    let scaled = (config.control_run_factor * longest as f64).floor() as usize;
    Ok(if longest == 0 {
        config.min_run_samples
    } else {
        (scaled + 1).max(config.min_run_samples)
    })
}

/// Ankle curve repeated `copies` times, sharing the boundary samples.
fn tile(curve: &[f64], copies: usize) -> Vec<f64> {
    let n = curve.len();
    let mut out = Vec::with_capacity((n - 1) * copies + 1);
    for _ in 0..copies {
        out.extend_from_slice(&curve[..n - 1]);
    }
    out.push(curve[n - 1]);
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SubjectSegmentation {
    pub subject: String,
    pub cohort: Cohort,
    pub source: &'static str,
    /// HMM used for decoding: the held-out subject's fold, `pooled` or `file`.
    pub hmm: String,
    /// State labels 1..4 on the grid.
    pub states: Vec<u8>,
    pub log_joint: f64,
    /// Every maximal run of abnormal states in the Viterbi path.
    pub abnormal_runs: Vec<AnomalousSegment>,
    /// Runs long enough to pass the decision rule.
    pub anomalous_segments: Vec<AnomalousSegment>,
    pub min_run_samples: usize,
    /// Events on the tiled average cycle; times are fractions of the tiled span.
    pub events: GaitEvents,
    pub phase_durations: Option<PhaseDurations>,
    pub phase_error: Option<String>,
}

/// Viterbi decoding plus event and phase extraction for one subject.
pub fn decode_subject(
    model: &HmmModel,
    hmm_name: &str,
    min_run_samples: usize,
    subject: &PreparedSubject,
    observations: &ObservationSequence,
    config: &SegmentConfig,
) -> Result<SubjectSegmentation> {
    let grid = subject.grid();
    let decoded = viterbi_decode(model, observations)?;
    let runs = anomalous_segments(&decoded, grid)?;
    let segments = runs
        .iter()
        .filter(|r| run_samples(r) >= min_run_samples)
        .cloned()
        .collect();
    let right: Vec<f64> = observations.steps.iter().map(|o| o[0]).collect();
    let left: Vec<f64> = observations.steps.iter().map(|o| o[1]).collect();
    let copies = config.event_cycles.max(1);
    let events = GaitEvents {
        right: detect_events(&tile(&right, copies), &config.events)?,
        left: detect_events(&tile(&left, copies), &config.events)?,
    };
    let (phase_durations, phase_error) = match phase_durations(&events) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(SubjectSegmentation {
        subject: subject.id.clone(),
        cohort: subject.cohort,
        source: match observations.source {
            ObservationSource::Raw => "raw",
            ObservationSource::MogpPredicted => "mogp-predicted",
        },
        hmm: hmm_name.to_string(),
        states: decoded.states.iter().map(|s| s.label()).collect(),
        log_joint: decoded.log_joint,
        abnormal_runs: runs,
        anomalous_segments: segments,
        min_run_samples,
        events,
        phase_durations,
        phase_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HmmSummary {
    pub name: String,
    pub state_means: [[f64; 2]; N_STATES],
    pub shared_covariance: [[f64; 2]; 2],
    pub em_iterations: usize,
    pub final_log_likelihood: f64,
    pub min_run_samples: usize,
    #[serde(skip)]
    pub model: HmmModel,
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentationReport {
    pub schema: &'static str,
    pub scheme: String,
    pub subjects: Vec<SubjectSegmentation>,
    pub models: Vec<HmmSummary>,
}

impl SegmentationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Segments every subject. `predictions` supplies MoGP posteriors by
/// subject id (raw averaged signals are used for subjects without one);
/// `fixed` bypasses training.
pub fn segment_corpus(
    subjects: &[PreparedSubject],
    predictions: &[SubjectPrediction],
    fixed: Option<&HmmModel>,
    config: &SegmentConfig,
) -> Result<SegmentationReport> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects to segment"));
    }
    let mut order: Vec<&PreparedSubject> = subjects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let observations = order
        .iter()
        .map(|s| observations_for(s, predictions.iter().find(|p| p.subject == s.id)))
        .collect::<Result<Vec<_>>>()?;
    let summary = |name: String, out: &crate::hmm::EmOutcome, min_run_samples: usize| HmmSummary {
        name,
        state_means: out.model.state_means,
        shared_covariance: out.model.shared_covariance,
        em_iterations: out.iterations,
        final_log_likelihood: *out.trace.last().expect("trace is never empty"),
        min_run_samples,
        model: out.model.clone(),
    };
    let mut models = Vec::new();
    let mut results = Vec::with_capacity(order.len());
    let scheme = match (fixed, config.scheme) {
        (Some(model), _) => {
            model.validate()?;
            for (s, o) in order.iter().zip(&observations) {
                results.push(decode_subject(
                    model,
                    "file",
                    config.min_run_samples,
                    s,
                    o,
                    config,
                )?);
            }
            "file".to_string()
        }
        (None, HmmScheme::Pooled) => {
            let training: Vec<(&ObservationSequence, Cohort)> = observations
                .iter()
                .zip(&order)
                .map(|(o, s)| (o, s.cohort))
                .collect();
            let out = train_segmentation_hmm(&training, config)?;
            let min_run = calibrate_min_run(&out.model, &training, config)?;
            for (s, o) in order.iter().zip(&observations) {
                results.push(decode_subject(&out.model, "pooled", min_run, s, o, config)?);
            }
            models.push(summary("pooled".into(), &out, min_run));
            HmmScheme::Pooled.name().to_string()
        }
        (None, HmmScheme::Loso) => {
            if order.len() < 2 {
                return Err(Error::invalid(
                    "leave-one-subject-out segmentation needs at least 2 subjects",
                ));
            }
            for (i, (s, o)) in order.iter().zip(&observations).enumerate() {
                let training: Vec<(&ObservationSequence, Cohort)> = observations
                    .iter()
                    .zip(&order)
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (o, s))| (o, s.cohort))
                    .collect();
                let out = train_segmentation_hmm(&training, config)?;
                let min_run = calibrate_min_run(&out.model, &training, config)?;
                let name = format!("loso_{}", s.id);
                results.push(decode_subject(&out.model, &name, min_run, s, o, config)?);
                models.push(summary(name, &out, min_run));
            }
            HmmScheme::Loso.name().to_string()
        }
    };
    Ok(SegmentationReport {
        schema: REPORT_SCHEMA,
        scheme,
        subjects: results,
        models,
    })
}
