//! Four-state hidden Markov model over bilateral ankle heights.
//!
//! States are normal stance, normal swing, abnormal stance and abnormal swing.
//! Emissions are bivariate Gaussians with per-state means and one covariance
//! shared by every state. All recursions run in log space.

mod io;

pub use io::{hmm_from_document, hmm_to_document, load_hmm, save_hmm, HMM_SCHEMA};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

pub const N_STATES: usize = 4;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Hidden gait phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PhaseState {
    NormalStance,
    NormalSwing,
    AbnormalStance,
    AbnormalSwing,
}

impl PhaseState {
    pub const ALL: [PhaseState; N_STATES] = [
        PhaseState::NormalStance,
        PhaseState::NormalSwing,
        PhaseState::AbnormalStance,
        PhaseState::AbnormalSwing,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Zero-based position in the parameter arrays.
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based label (s₁..s₄) used in reports.
    pub fn label(self) -> u8 {
        self as u8 + 1
    }

    pub fn is_abnormal(self) -> bool {
        matches!(self, PhaseState::AbnormalStance | PhaseState::AbnormalSwing)
    }
}

/// Where an observation sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationSource {
    Raw,
    MogpPredicted,
}

/// `[right ankle y, left ankle y]` per time step on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    pub steps: Vec<[f64; 2]>,
    pub source: ObservationSource,
}

impl ObservationSequence {
    pub fn new(steps: Vec<[f64; 2]>, source: ObservationSource) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("observation sequence is empty"));
        }
        if let Some(t) = steps
            .iter()
            .position(|o| !o[0].is_finite() || !o[1].is_finite())
        {
            return Err(Error::invalid(format!(
                "non-finite observation at step {t}"
            )));
        }
        Ok(Self { steps, source })
    }

    pub fn from_channels(right: &[f64], left: &[f64], source: ObservationSource) -> Result<Self> {
        if right.len() != left.len() {
            return Err(Error::LengthMismatch {
                what: "right vs left ankle",
                left: right.len(),
                right: left.len(),
            });
        }
        Self::new(
            right.iter().zip(left).map(|(&r, &l)| [r, l]).collect(),
            source,
        )
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmmModel {
    pub initial_probs: [f64; N_STATES],
    /// Row-stochastic: `transitions[i][j]` is P(next = j | current = i).
    pub transitions: [[f64; N_STATES]; N_STATES],
    pub state_means: [[f64; 2]; N_STATES],
    pub shared_covariance: [[f64; 2]; 2],
}

/// Expert-designed start probabilities favoring normal stance.
pub const DEFAULT_INITIAL: [f64; N_STATES] = [0.6, 0.3, 0.05, 0.05];

/// Expert-designed transitions; direct stance→abnormal-swing and
/// swing→abnormal-stance moves are forbidden.
pub const DEFAULT_TRANSITIONS: [[f64; N_STATES]; N_STATES] = [
    [0.7, 0.25, 0.05, 0.0],
    [0.3, 0.6, 0.0, 0.1],
    [0.25, 0.2, 0.5, 0.05],
    [0.25, 0.2, 0.05, 0.5],
];

impl Default for HmmModel {
    fn default() -> Self {
        default_model()
    }
}

/// π and A at their expert values, zero means and identity covariance.
/// Means and covariance are placeholders until [`initialize_emissions`].
pub fn default_model() -> HmmModel {
    HmmModel {
        initial_probs: DEFAULT_INITIAL,
        transitions: DEFAULT_TRANSITIONS,
        state_means: [[0.0; 2]; N_STATES],
        shared_covariance: [[1.0, 0.0], [0.0, 1.0]],
    }
}

/// Cholesky-style summary of the shared covariance.
#[derive(Clone, Copy, Debug)]
struct Precision {
    inv: [[f64; 2]; 2],
    log_norm: f64,
}

fn min_eigenvalue(c: &[[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (c[0][0] + c[1][1]);
    let diff = 0.5 * (c[0][0] - c[1][1]);
    mean - (diff * diff + c[0][1] * c[1][0]).max(0.0).sqrt()
}

impl HmmModel {
    /// Checks stochasticity, symmetry and positive-definiteness.
    pub fn validate(&self) -> Result<()> {
        let stochastic = |row: &[f64; N_STATES]| {
            row.iter().all(|p| *p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if !stochastic(&self.initial_probs) {
            return Err(Error::invalid(
                "initial probabilities must form a distribution",
            ));
        }
        if let Some(i) = self.transitions.iter().position(|r| !stochastic(r)) {
            return Err(Error::invalid(format!(
                "transition row {i} is not a distribution"
            )));
        }
        if self.state_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state means must be finite"));
        }
        self.precision().map(|_| ())
    }

    fn precision(&self) -> Result<Precision> {
        let c = &self.shared_covariance;
        if c.iter().flatten().any(|v| !v.is_finite())
            || (c[0][1] - c[1][0]).abs() > 1e-12 * (1.0 + c[0][1].abs())
        {
            return Err(Error::NotPositiveDefinite);
        }
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        if c[0][0] <= 0.0 || det <= 0.0 || min_eigenvalue(c) < 1e-8 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Precision {
            inv: [
                [c[1][1] / det, -c[0][1] / det],
                [-c[1][0] / det, c[0][0] / det],
            ],
            log_norm: -LN_2PI - 0.5 * det.ln(),
        })
    }

    fn log_params(&self) -> ([f64; N_STATES], [[f64; N_STATES]; N_STATES]) {
        let log_pi = self.initial_probs.map(f64::ln);
        let log_a = self.transitions.map(|row| row.map(f64::ln));
        (log_pi, log_a)
    }

    /// Draws a state path and observations of length `len`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        len: usize,
        rng: &mut R,
    ) -> Result<(ObservationSequence, Vec<PhaseState>)> {
        self.precision()?;
        let c = &self.shared_covariance;
        let l00 = c[0][0].sqrt();
        let l10 = c[1][0] / l00;
        let l11 = (c[1][1] - l10 * l10).sqrt();
        let pick = |probs: &[f64; N_STATES], rng: &mut R| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
        };
        let mut states = Vec::with_capacity(len);
        let mut steps = Vec::with_capacity(len);
        let mut s = pick(&self.initial_probs, rng);
        for t in 0..len {
            if t > 0 {
                s = pick(&self.transitions[s], rng);
            }
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = StandardNormal.sample(rng);
            let mu = self.state_means[s];
            steps.push([mu[0] + l00 * z0, mu[1] + l10 * z0 + l11 * z1]);
            states.push(PhaseState::ALL[s]);
        }
        Ok((
            ObservationSequence::new(steps, ObservationSource::Raw)?,
            states,
        ))
    }
}

fn logpdf_with(p: &Precision, mean: &[f64; 2], obs: &[f64; 2]) -> f64 {
    let d0 = obs[0] - mean[0];
    let d1 = obs[1] - mean[1];
    let quad =
        d0 * (p.inv[0][0] * d0 + p.inv[0][1] * d1) + d1 * (p.inv[1][0] * d0 + p.inv[1][1] * d1);
    p.log_norm - 0.5 * quad
}

/// Log-density of `obs` under state `state`'s bivariate Gaussian.
pub fn emission_logpdf(model: &HmmModel, obs: [f64; 2], state: PhaseState) -> Result<f64> {
    let p = model.precision()?;
    Ok(logpdf_with(&p, &model.state_means[state.index()], &obs))
}

fn emission_table(model: &HmmModel, seq: &ObservationSequence) -> Result<Vec<[f64; N_STATES]>> {
    let p = model.precision()?;
    Ok(seq
        .steps
        .iter()
        .map(|o| std::array::from_fn(|i| logpdf_with(&p, &model.state_means[i], o)))
        .collect())
}

fn logsumexp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn apply_mask(table: &mut [[f64; N_STATES]], allowed: &[bool; N_STATES]) {
    for row in table {
        for (v, ok) in row.iter_mut().zip(allowed) {
            if !ok {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

fn forward(
    log_pi: &[f64; N_STATES],
    log_a: &[[f64; N_STATES]; N_STATES],
    em: &[[f64; N_STATES]],
) -> Vec<[f64; N_STATES]> {
    let mut alpha = Vec::with_capacity(em.len());
    alpha.push(std::array::from_fn(|i| log_pi[i] + em[0][i]));
    for t in 1..em.len() {
        let prev: [f64; N_STATES] = alpha[t - 1];
        alpha.push(std::array::from_fn(|j| {
            logsumexp((0..N_STATES).map(|i| prev[i] + log_a[i][j])) + em[t][j]
        }));
    }
    alpha
}

fn backward(log_a: &[[f64; N_STATES]; N_STATES], em: &[[f64; N_STATES]]) -> Vec<[f64; N_STATES]> {
    let len = em.len();
    let mut beta = vec![[0.0; N_STATES]; len];
    for t in (0..len.saturating_sub(1)).rev() {
        let next = beta[t + 1];
        beta[t] = std::array::from_fn(|i| {
            logsumexp((0..N_STATES).map(|j| log_a[i][j] + em[t + 1][j] + next[j]))
        });
    }
    beta
}

/// log p(O | θ) by the log-space forward recursion.
pub fn forward_log_likelihood(model: &HmmModel, seq: &ObservationSequence) -> Result<f64> {
    check_sequence(seq)?;
    let em = emission_table(model, seq)?;
    let (log_pi, log_a) = model.log_params();
    let alpha = forward(&log_pi, &log_a, &em);
    Ok(logsumexp(alpha[alpha.len() - 1]))
}

fn check_sequence(seq: &ObservationSequence) -> Result<()> {
    if seq.steps.is_empty() {
        return Err(Error::invalid("observation sequence is empty"));
    }
    if let Some(t) = seq
        .steps
        .iter()
        .position(|o| !o[0].is_finite() || !o[1].is_finite())
    {
        return Err(Error::invalid(format!(
            "non-finite observation at step {t}"
        )));
    }
    Ok(())
}

/// Most probable state path and its joint log probability.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedStates {
    pub states: Vec<PhaseState>,
    pub log_joint: f64,
}

/// log p(states, O | θ) for an explicit path.
pub fn path_log_joint(
    model: &HmmModel,
    seq: &ObservationSequence,
    states: &[PhaseState],
) -> Result<f64> {
    if states.len() != seq.len() {
        return Err(Error::LengthMismatch {
            what: "state path vs observations",
            left: states.len(),
            right: seq.len(),
        });
    }
    let p = model.precision()?;
    let mut total = 0.0;
    for (t, (s, o)) in states.iter().zip(&seq.steps).enumerate() {
        total += if t == 0 {
            model.initial_probs[s.index()].ln()
        } else {
            model.transitions[states[t - 1].index()][s.index()].ln()
        };
        total += logpdf_with(&p, &model.state_means[s.index()], o);
    }
    Ok(total)
}

/// Viterbi decoding. Ties are broken toward the lowest state index.
pub fn viterbi_decode(model: &HmmModel, seq: &ObservationSequence) -> Result<DecodedStates> {
    check_sequence(seq)?;
    let em = emission_table(model, seq)?;
    let (log_pi, log_a) = model.log_params();
    let len = em.len();
    let mut delta = vec![[f64::NEG_INFINITY; N_STATES]; len];
    let mut back = vec![[0usize; N_STATES]; len];
    delta[0] = std::array::from_fn(|i| log_pi[i] + em[0][i]);
    for t in 0..len {
        if t > 0 {
            for j in 0..N_STATES {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for i in 0..N_STATES {
                    let v = delta[t - 1][i] + log_a[i][j];
                    if v > best {
                        best = v;
                        arg = i;
                    }
                }
                delta[t][j] = best + em[t][j];
                back[t][j] = arg;
            }
        }
        if delta[t]
            .iter()
            .all(|v| *v == f64::NEG_INFINITY || v.is_nan())
        {
            return Err(Error::EmissionUnderflow { step: t });
        }
    }
    let mut last = 0;
    for i in 1..N_STATES {
        if delta[len - 1][i] > delta[len - 1][last] {
            last = i;
        }
    }
    let log_joint = delta[len - 1][last];
    let mut path = vec![0usize; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(DecodedStates {
        states: path.into_iter().map(|i| PhaseState::ALL[i]).collect(),
        log_joint,
    })
}

/// Baum-Welch settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when the relative change of total log-likelihood falls below this.
    pub tolerance: f64,
    /// Re-estimate π and A; when false they stay at their initial values.
    pub learn_transitions: bool,
    /// States whose means are held fixed.
    pub frozen_means: [bool; N_STATES],
    /// Re-estimate the shared covariance.
    pub learn_covariance: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            learn_transitions: false,
            frozen_means: [false; N_STATES],
            learn_covariance: true,
        }
    }
}

/// A training sequence with the states it may occupy.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSequence<'a> {
    pub observations: &'a ObservationSequence,
    pub allowed_states: [bool; N_STATES],
}

impl<'a> From<&'a ObservationSequence> for TrainingSequence<'a> {
    fn from(observations: &'a ObservationSequence) -> Self {
        Self {
            observations,
            allowed_states: [true; N_STATES],
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmOutcome {
    pub model: HmmModel,
    /// Total log-likelihood of the starting model, then after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Posterior mass below which a state keeps its previous mean.
pub const EMPTY_STATE_MASS: f64 = 1e-12;

struct Sufficient {
    loglik: f64,
    gamma0: [f64; N_STATES],
    occupancy: [f64; N_STATES],
    weighted_sum: [[f64; 2]; N_STATES],
    scatter_cross: [[[f64; 2]; 2]; N_STATES],
    xi: [[f64; N_STATES]; N_STATES],
    transitions_from: [f64; N_STATES],
}

fn e_step(model: &HmmModel, seqs: &[TrainingSequence<'_>]) -> Result<Sufficient> {
    let (log_pi, log_a) = model.log_params();
    let mut s = Sufficient {
        loglik: 0.0,
        gamma0: [0.0; N_STATES],
        occupancy: [0.0; N_STATES],
        weighted_sum: [[0.0; 2]; N_STATES],
        scatter_cross: [[[0.0; 2]; 2]; N_STATES],
        xi: [[0.0; N_STATES]; N_STATES],
        transitions_from: [0.0; N_STATES],
    };
    for seq in seqs {
        let obs = seq.observations;
        check_sequence(obs)?;
        let mut em = emission_table(model, obs)?;
        apply_mask(&mut em, &seq.allowed_states);
        let alpha = forward(&log_pi, &log_a, &em);
        let beta = backward(&log_a, &em);
        let ll = logsumexp(alpha[alpha.len() - 1]);
        if !ll.is_finite() {
            return Err(Error::EmissionUnderflow { step: 0 });
        }
        s.loglik += ll;
        for (t, o) in obs.steps.iter().enumerate() {
            for i in 0..N_STATES {
                let g = (alpha[t][i] + beta[t][i] - ll).exp();
                if g == 0.0 {
                    continue;
                }
                if t == 0 {
                    s.gamma0[i] += g;
                }
                s.occupancy[i] += g;
                s.weighted_sum[i][0] += g * o[0];
                s.weighted_sum[i][1] += g * o[1];
                for a in 0..2 {
                    for b in 0..2 {
                        s.scatter_cross[i][a][b] += g * o[a] * o[b];
                    }
                }
                if t + 1 < obs.len() {
                    s.transitions_from[i] += g;
                    for j in 0..N_STATES {
                        let x = alpha[t][i] + log_a[i][j] + em[t + 1][j] + beta[t + 1][j] - ll;
                        s.xi[i][j] += x.exp();
                    }
                }
            }
        }
    }
    Ok(s)
}

fn m_step(model: &HmmModel, s: &Sufficient, config: &EmConfig, n_seqs: usize) -> HmmModel {
    let mut next = model.clone();
    for i in 0..N_STATES {
        if !config.frozen_means[i] && s.occupancy[i] >= EMPTY_STATE_MASS {
            next.state_means[i] = [
                s.weighted_sum[i][0] / s.occupancy[i],
                s.weighted_sum[i][1] / s.occupancy[i],
            ];
        }
    }
    if config.learn_covariance {
        let total: f64 = s.occupancy.iter().sum();
        let mut cov = [[0.0; 2]; 2];
        for i in 0..N_STATES {
            let mu = next.state_means[i];
            let sum = s.weighted_sum[i];
            for a in 0..2 {
                for b in 0..2 {
                    // Σ_t γ (o − μ)(o − μ)ᵀ expanded around the accumulated moments
                    cov[a][b] += s.scatter_cross[i][a][b] - mu[a] * sum[b] - sum[a] * mu[b]
                        + s.occupancy[i] * mu[a] * mu[b];
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let sym = 0.5 * (cov[0][1] + cov[1][0]);
        cov[0][1] = sym;
        cov[1][0] = sym;
        let ridge = 1e-6 * (cov[0][0] + cov[1][1]) / 2.0;
        cov[0][0] += ridge;
        cov[1][1] += ridge;
        if min_eigenvalue(&cov) >= 1e-8 {
            next.shared_covariance = cov;
        }
    }
    if config.learn_transitions {
        let total0: f64 = s.gamma0.iter().sum();
        if total0 > 0.0 && n_seqs > 0 {
            next.initial_probs = s.gamma0.map(|g| g / total0);
        }
        for i in 0..N_STATES {
            let row_total: f64 = s.xi[i].iter().sum();
            if row_total >= EMPTY_STATE_MASS {
                next.transitions[i] = s.xi[i].map(|x| x / row_total);
            }
        }
    }
    next
}

/// Total forward log-likelihood over masked training sequences.
pub fn total_log_likelihood(model: &HmmModel, seqs: &[TrainingSequence<'_>]) -> Result<f64> {
    Ok(e_step(model, seqs)?.loglik)
}

/// Baum-Welch EM from `init` over every sequence in `sequences`.
pub fn baum_welch_fit<'a>(
    init: &HmmModel,
    sequences: impl IntoIterator<Item = TrainingSequence<'a>>,
    config: &EmConfig,
) -> Result<EmOutcome> {
    let seqs: Vec<TrainingSequence<'a>> = sequences.into_iter().collect();
    if seqs.is_empty() {
        return Err(Error::invalid("Baum-Welch needs at least one sequence"));
    }
    init.validate()?;
    let mut model = init.clone();
    let mut stats = e_step(&model, &seqs)?;
    let mut trace = vec![stats.loglik];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        model = m_step(&model, &stats, config, seqs.len());
        stats = e_step(&model, &seqs)?;
        iterations += 1;
        let prev = trace[trace.len() - 1];
        trace.push(stats.loglik);
        if (stats.loglik - prev).abs() <= config.tolerance * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome {
        model,
        trace,
        iterations,
        converged,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Data-driven emission initialization: normal stance at the 25th percentile
/// of each channel, normal swing at the 75th, abnormal states one pooled
/// standard deviation above their normal counterparts, covariance set to the
/// pooled per-channel variances.
pub fn initialize_emissions(
    model: &HmmModel,
    sequences: &[&ObservationSequence],
) -> Result<HmmModel> {
    let mut channels = [Vec::new(), Vec::new()];
    for seq in sequences {
        check_sequence(seq)?;
        for o in &seq.steps {
            channels[0].push(o[0]);
            channels[1].push(o[1]);
        }
    }
    if channels[0].is_empty() {
        return Err(Error::invalid("no observations to initialize from"));
    }
    let mut q25 = [0.0; 2];
    let mut q75 = [0.0; 2];
    let mut sd = [0.0; 2];
    let mut var = [0.0; 2];
    for c in 0..2 {
        let mut v = channels[c].clone();
        v.sort_by(f64::total_cmp);
        q25[c] = quantile(&v, 0.25);
        q75[c] = quantile(&v, 0.75);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        var[c] = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        sd[c] = var[c].sqrt();
    }
    let mut out = model.clone();
    out.state_means = [
        q25,
        q75,
        [q25[0] + sd[0], q25[1] + sd[1]],
        [q75[0] + sd[0], q75[1] + sd[1]],
    ];
    let floor = 1e-6 * (var[0] + var[1]).max(1e-12);
    out.shared_covariance = [[var[0].max(floor), 0.0], [0.0, var[1].max(floor)]];
    Ok(out)
}

/// Maximal run of abnormal states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnomalousSegment {
    pub start: f64,
    pub end: f64,
    pub state: PhaseState,
    pub start_index: usize,
    pub end_index: usize,
}

/// Contiguous runs of abnormal stance/swing, each labeled with its most
/// frequent abnormal state (ties go to abnormal stance).
pub fn anomalous_segments(
    decoded: &DecodedStates,
    time_grid: &[f64],
) -> Result<Vec<AnomalousSegment>> {
    if decoded.states.len() != time_grid.len() {
        return Err(Error::LengthMismatch {
            what: "decoded states vs time grid",
            left: decoded.states.len(),
            right: time_grid.len(),
        });
    }
    let mut out = Vec::new();
    let mut t = 0;
    let states = &decoded.states;
    while t < states.len() {
        if !states[t].is_abnormal() {
            t += 1;
            continue;
        }
        let start = t;
        let (mut stance, mut swing) = (0, 0);
        while t < states.len() && states[t].is_abnormal() {
            match states[t] {
                PhaseState::AbnormalStance => stance += 1,
                _ => swing += 1,
            }
            t += 1;
        }
        out.push(AnomalousSegment {
            start: time_grid[start],
            end: time_grid[t - 1],
            state: if swing > stance {
                PhaseState::AbnormalSwing
            } else {
                PhaseState::AbnormalStance
            },
            start_index: start,
            end_index: t - 1,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq(steps: &[[f64; 2]]) -> ObservationSequence {
        ObservationSequence::new(steps.to_vec(), ObservationSource::Raw).unwrap()
    }

    #[test]
    fn default_model_matches_expert_values() {
        let m = default_model();
        assert_eq!(m.initial_probs, [0.6, 0.3, 0.05, 0.05]);
        for row in &m.transitions {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert_eq!(m.transitions[0][3], 0.0);
        assert_eq!(m.transitions[1][2], 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn emission_at_mean_with_identity_covariance() {
        let mut m = default_model();
        m.state_means[2] = [0.4, -1.0];
        let v = emission_logpdf(&m, [0.4, -1.0], PhaseState::AbnormalStance).unwrap();
        assert_relative_eq!(v, -1.837_877_066_409_345_5, epsilon = 1e-14);
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let mut m = default_model();
        m.shared_covariance = [[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            emission_logpdf(&m, [0.0, 0.0], PhaseState::NormalStance),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn single_step_forward_and_viterbi() {
        let mut m = default_model();
        m.state_means = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0]];
        let s = seq(&[[0.9, 1.2]]);
        let em: Vec<f64> = PhaseState::ALL
            .iter()
            .map(|&st| {
                m.initial_probs[st.index()].ln() + emission_logpdf(&m, [0.9, 1.2], st).unwrap()
            })
            .collect();
        assert_relative_eq!(
            forward_log_likelihood(&m, &s).unwrap(),
            logsumexp(em.clone()),
            epsilon = 1e-12
        );
        let d = viterbi_decode(&m, &s).unwrap();
        let best = em.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(d.states, vec![PhaseState::NormalSwing]);
        assert_relative_eq!(d.log_joint, best, epsilon = 1e-12);
    }

    #[test]
    fn uniform_emissions_decode_to_normal_stance() {
        let m = default_model();
        let s = seq(&[[0.3, 0.1]; 6]);
        let d = viterbi_decode(&m, &s).unwrap();
        assert!(d.states.iter().all(|s| *s == PhaseState::NormalStance));
    }

    #[test]
    fn translation_invariance() {
        let mut m = default_model();
        m.state_means = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0]];
        let s = seq(&[[0.1, 0.2], [1.1, 0.7], [1.9, 0.3]]);
        let base = forward_log_likelihood(&m, &s).unwrap();
        let shift = 3.7;
        let mut m2 = m.clone();
        for mu in m2.state_means.iter_mut() {
            mu[0] += shift;
            mu[1] += shift;
        }
        let s2 = seq(&s
            .steps
            .iter()
            .map(|o| [o[0] + shift, o[1] + shift])
            .collect::<Vec<_>>());
        assert_relative_eq!(
            forward_log_likelihood(&m2, &s2).unwrap(),
            base,
            epsilon = 1e-10
        );
    }

    #[test]
    fn run_length_segments() {
        use PhaseState::*;
        let decoded = DecodedStates {
            states: vec![
                NormalStance,
                NormalStance,
                AbnormalStance,
                AbnormalStance,
                AbnormalStance,
                NormalSwing,
                AbnormalSwing,
                AbnormalSwing,
            ],
            log_joint: 0.0,
        };
        let grid: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let segs = anomalous_segments(&decoded, &grid).unwrap();
        let summary: Vec<_> = segs
            .iter()
            .map(|s| (s.start, s.end, s.state.label()))
            .collect();
        assert_eq!(summary, vec![(2.0, 4.0, 3), (6.0, 7.0, 4)]);

        let normal = DecodedStates {
            states: vec![NormalStance; 5],
            log_joint: 0.0,
        };
        assert!(anomalous_segments(&normal, &grid[..5]).unwrap().is_empty());
        assert!(anomalous_segments(&normal, &grid).is_err());
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let m = initialize_emissions(
            &default_model(),
            &[&seq(&[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])],
        )
        .unwrap();
        let s = seq(&[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]);
        let cfg = EmConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let out = baum_welch_fit(&m, [TrainingSequence::from(&s)], &cfg).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn constant_sequence_pulls_one_mean_to_the_constant() {
        let s = seq(&[[0.7, -0.2]; 50]);
        let mut init = default_model();
        init.state_means = [[0.5, 0.0], [2.0, 2.0], [-2.0, 1.0], [3.0, -3.0]];
        init.shared_covariance = [[0.5, 0.0], [0.0, 0.5]];
        let cfg = EmConfig {
            max_iterations: 60,
            tolerance: 0.0,
            ..Default::default()
        };
        let out = baum_welch_fit(&init, [TrainingSequence::from(&s)], &cfg).unwrap();
        let closest = out
            .model
            .state_means
            .iter()
            .map(|mu| ((mu[0] - 0.7).powi(2) + (mu[1] + 0.2).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 1e-6, "closest mean at distance {closest}");
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn masked_states_stay_empty() {
        let s = seq(&[[0.0, 1.0], [1.0, 0.0], [0.2, 0.9], [0.9, 0.1]]);
        let init = initialize_emissions(&default_model(), &[&s]).unwrap();
        let ts = TrainingSequence {
            observations: &s,
            allowed_states: [true, true, false, false],
        };
        let cfg = EmConfig {
            max_iterations: 5,
            ..Default::default()
        };
        let out = baum_welch_fit(&init, [ts], &cfg).unwrap();
        assert_eq!(out.model.state_means[2], init.state_means[2]);
        assert_eq!(out.model.state_means[3], init.state_means[3]);
    }
}
