//! End-to-end composition used by the command-line front end: preprocessing,
//! MoGP fitting per scope, posterior prediction, HMM segmentation and
//! evaluation.

mod docs;
mod evaluate;
mod export;
mod segment;

use serde::Serialize;

pub use docs::{
    predictions_from_document, predictions_to_document, prepared_from_document,
    prepared_to_document, PREDICTIONS_SCHEMA, PREPARED_SCHEMA,
};
pub use evaluate::{evaluate_predictions, EvaluationReport, SplitReport, METRICS_SCHEMA};
pub use export::{band_table, coregionalization_table, observation_table};
pub use segment::{
    calibrate_min_run, decode_subject, observations_for, segment_corpus, train_segmentation_hmm,
    HmmScheme, SegmentConfig, SegmentationReport, SubjectSegmentation, REPORT_SCHEMA,
};

use crate::dataio::{Cohort, SubjectRecord};
use crate::error::{Error, Result};
use crate::mogp::{fit, FitOutcome, MoGPModel, OptimizerConfig, PosteriorPrediction, TrainingSet};
use crate::signal::{
    knee_angle_trajectories, lowpass_filter, normalize_and_align, resample_linear, ChannelScaling,
    Joint, Side, TrajectorySet, CHANNELS, DEFAULT_CUTOFF_HZ, DEFAULT_FILTER_ORDER,
    DEFAULT_GRID_POINTS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub filter: bool,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub grid_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter: true,
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            filter_order: DEFAULT_FILTER_ORDER,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// A subject after filtering, alignment and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSubject {
    pub id: String,
    pub cohort: Cohort,
    pub sets: Vec<TrajectorySet>,
    pub scaling: ChannelScaling,
    /// Inner knee angle per cycle on the grid, degrees; right then left.
    pub knee_angles: [Vec<Vec<f64>>; 2],
}

impl PreparedSubject {
    pub fn grid(&self) -> &[f64] {
        &self.sets[0].grid
    }

    /// Cycle-averaged normalized signal per channel.
    pub fn mean_cycle(&self) -> [Vec<f64>; 6] {
        let n = self.sets.len() as f64;
        std::array::from_fn(|c| {
            let mut acc = vec![0.0; self.grid().len()];
            for s in &self.sets {
                for (a, v) in acc.iter_mut().zip(&s.channels[c]) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / n).collect()
        })
    }
}

pub fn preprocess_subject(
    record: &SubjectRecord,
    config: &PreprocessConfig,
) -> Result<PreparedSubject> {
    let mut cycles = Vec::with_capacity(record.cycles.len());
    let mut knee_angles: [Vec<Vec<f64>>; 2] = Default::default();
    for cycle in &record.cycles {
        let trajectories = cycle
            .trajectories
            .iter()
            .map(|t| {
                if config.filter {
                    lowpass_filter(t, config.cutoff_hz, config.filter_order)
                } else {
                    t.validate().map(|_| t.clone())
                }
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::InvalidInput(msg) => Error::invalid(format!(
                    "subject {} cycle {}: {msg}",
                    record.id, cycle.cycle
                )),
                other => other,
            })?;
        for (slot, side) in knee_angles.iter_mut().zip(Side::ALL) {
            let find = |joint: Joint| &trajectories[crate::signal::Channel { joint, side }.index()];
            let angle =
                knee_angle_trajectories(find(Joint::Hip), find(Joint::Knee), find(Joint::Ankle))?;
            slot.push(resample_linear(&angle, config.grid_points));
        }
        cycles.push(std::array::from_fn(|c| trajectories[c].y()));
    }
    let normalized = normalize_and_align(&record.id, &cycles, config.grid_points)?;
    Ok(PreparedSubject {
        id: record.id.clone(),
        cohort: record.cohort,
        sets: normalized.sets,
        scaling: normalized.scaling,
        knee_angles,
    })
}

/// Preprocesses every subject, sorted by id.
pub fn preprocess_corpus(
    corpus: &[SubjectRecord],
    config: &PreprocessConfig,
) -> Result<Vec<PreparedSubject>> {
    crate::dataio::validate_corpus(corpus)?;
    let mut out = corpus
        .iter()
        .map(|r| preprocess_subject(r, config))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Which subjects each MoGP is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitScope {
    /// One model per subject, trained on that subject's cycles.
    Subject,
    /// One model over all subjects.
    Pooled,
    /// One model per held-out subject, trained on all other subjects.
    Loso,
}

impl FitScope {
    pub fn name(self) -> &'static str {
        match self {
            FitScope::Subject => "subject",
            FitScope::Pooled => "pooled",
            FitScope::Loso => "loso",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "subject" => Ok(FitScope::Subject),
            "pooled" => Ok(FitScope::Pooled),
            "loso" => Ok(FitScope::Loso),
            other => Err(Error::invalid(format!(
                "unknown fit scope {other:?}; use subject, pooled or loso"
            ))),
        }
    }

    /// File stem of the model that serves predictions for `subject`.
    pub fn model_name(self, subject: &str) -> String {
        match self {
            FitScope::Subject => format!("mogp_subject_{subject}"),
            FitScope::Pooled => "mogp_pooled".to_string(),
            FitScope::Loso => format!("mogp_loso_{subject}"),
        }
    }
}

/// Grid indices of `count` evenly spread training points, cycling through
/// the `cycles` available so that neighbouring points come from different
/// cycles.
fn sample_plan(count: usize, grid_points: usize, cycles: usize) -> Vec<(usize, usize)> {
    let count = count.min(grid_points * cycles);
    (0..count)
        .map(|k| {
            let idx = if count == 1 {
                0
            } else {
                (k * (grid_points - 1) + (count - 1) / 2) / (count - 1)
            };
            (k % cycles, idx)
        })
        .collect()
}

/// Training points for one or more subjects: `points_per_output` samples per
/// channel spread over the grid and over all cycles of all subjects.
pub fn training_set(
    subjects: &[&PreparedSubject],
    points_per_output: usize,
) -> Result<TrainingSet> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects to train on"));
    }
    if points_per_output < 2 {
        return Err(Error::invalid("need at least 2 training points per output"));
    }
    let sets: Vec<&TrajectorySet> = subjects.iter().flat_map(|s| s.sets.iter()).collect();
    let grid_points = sets[0].grid.len();
    let plan = sample_plan(points_per_output, grid_points, sets.len());
    let mut times = Vec::new();
    let mut outputs = Vec::new();
    let mut values = Vec::new();
    for c in 0..CHANNELS.len() {
        for &(k, idx) in &plan {
            times.push(sets[k].grid[idx]);
            outputs.push(c);
            values.push(sets[k].channels[c][idx]);
        }
    }
    TrainingSet::new(times, outputs, values)
}

/// One fitted model and the subjects it serves.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub name: String,
    pub scope: FitScope,
    /// Subjects whose predictions come from this model.
    pub serves: Vec<String>,
    pub outcome: FitOutcome,
}

/// Fits all models required by `scope`, in subject-id order.
pub fn fit_scope(
    subjects: &[PreparedSubject],
    scope: FitScope,
    points_per_output: usize,
    optimizer: &OptimizerConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<FittedModel>> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects to fit"));
    }
    let mut order: Vec<&PreparedSubject> = subjects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(String, Vec<String>, Vec<&PreparedSubject>)> = match scope {
        FitScope::Subject => order
            .iter()
            .map(|s| (scope.model_name(&s.id), vec![s.id.clone()], vec![*s]))
            .collect(),
        FitScope::Pooled => vec![(
            scope.model_name(""),
            order.iter().map(|s| s.id.clone()).collect(),
            order.clone(),
        )],
        FitScope::Loso => {
            if order.len() < 2 {
                return Err(Error::invalid(
                    "leave-one-subject-out fitting needs at least 2 subjects",
                ));
            }
            order
                .iter()
                .map(|held| {
                    let train = order.iter().filter(|s| s.id != held.id).copied().collect();
                    (scope.model_name(&held.id), vec![held.id.clone()], train)
                })
                .collect()
        }
    };
    jobs.into_iter()
        .map(|(name, serves, train)| {
            progress(&name);
            let data = training_set(&train, points_per_output)?;
            let outcome = fit(&data, optimizer)?;
            Ok(FittedModel {
                name,
                scope,
                serves,
                outcome,
            })
        })
        .collect()
}

/// Posterior for one subject in normalized and raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPrediction {
    pub subject: String,
    pub model: String,
    pub posterior: PosteriorPrediction,
    pub raw_mean: Vec<Vec<f64>>,
    pub raw_std: Vec<Vec<f64>>,
}

pub fn predict_subject(
    model: &MoGPModel,
    model_name: &str,
    subject: &PreparedSubject,
) -> Result<SubjectPrediction> {
    if model.n_outputs() != CHANNELS.len() {
        return Err(Error::invalid(format!(
            "model {model_name} has {} outputs, expected {}",
            model.n_outputs(),
            CHANNELS.len()
        )));
    }
    let posterior = model.predict(subject.grid())?;
    let raw_mean = posterior
        .mean
        .iter()
        .enumerate()
        .map(|(c, m)| m.iter().map(|z| subject.scaling.to_raw(c, *z)).collect())
        .collect();
    let raw_std = posterior
        .std
        .iter()
        .enumerate()
        .map(|(c, s)| s.iter().map(|z| z * subject.scaling.std[c]).collect())
        .collect();
    Ok(SubjectPrediction {
        subject: subject.id.clone(),
        model: model_name.to_string(),
        posterior,
        raw_mean,
        raw_std,
    })
}
