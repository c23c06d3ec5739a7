use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, MoGPModel, TrainingSet};
use crate::error::{Error, Result};
use crate::kernels::{CompositeKernelSpec, CoregionalizationFactor, N_KERNEL_PARAMS};

/// Settings for maximum-likelihood fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Applied to the sub-kernel log parameters, W, log κ and log noise.
    pub weight_decay: f64,
    pub seed: u64,
    /// Rank of the coregionalisation factor W.
    pub rank: usize,
    /// Number of outputs; inferred from the training set when `None`.
    pub outputs: Option<usize>,
    /// Early stop once |ΔLML| stays below this for `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub initial_noise: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 7.5e-3,
            weight_decay: 1e-4,
            seed: 0,
            rank: 2,
            outputs: None,
            tolerance: 1e-6,
            patience: 50,
            initial_noise: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.rank == 0 {
            return Err(Error::invalid("coregionalisation rank must be at least 1"));
        }
        if !(self.initial_noise > 0.0 && self.initial_noise.is_finite()) {
            return Err(Error::invalid("initial noise must be positive"));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Result of [`fit`]: the best model seen and the per-iteration LML trace.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: MoGPModel,
    /// LML before each update, followed by the LML after the last update.
    pub trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl FitOutcome {
    pub fn initial_lml(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_lml(&self) -> f64 {
        self.model.log_marginal_likelihood()
    }
}

/// Initial model: default kernel, random W, per-output sample means.
pub fn initial_model(training: &TrainingSet, config: &OptimizerConfig) -> Result<MoGPModel> {
    config.validate()?;
    let outputs = config.outputs.unwrap_or_else(|| training.n_outputs());
    training.check_fittable(outputs)?;
    if config.rank > outputs {
        return Err(Error::invalid(format!(
            "coregionalisation rank {} exceeds the number of outputs {outputs}",
            config.rank
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let coreg = CoregionalizationFactor::init(outputs, config.rank, &mut rng)?;
    let means = training.output_means(outputs);
    let mut model = MoGPModel::new(
        CompositeKernelSpec::default(),
        coreg,
        means,
        config.initial_noise,
        training.clone(),
    )?;
    model.config = Some(config.clone());
    Ok(model)
}

/// Maximizes the log marginal likelihood with Adam on the unconstrained
/// parameters. Returns the iterate with the highest LML.
pub fn fit(training: &TrainingSet, config: &OptimizerConfig) -> Result<FitOutcome> {
    let mut model = initial_model(training, config)?;
    let mut params = model.params();
    let n = params.len();
    let mean_start = N_KERNEL_PARAMS + model.coreg.n_params();
    let decay_mask: Vec<bool> = (0..n).map(|i| i < mean_start || i == n - 1).collect();
    let mut adam = Adam::new(n, config.learning_rate, config.weight_decay);

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut best: Option<(f64, MoGPModel)> = None;
    let mut streak = 0;
    let mut converged = false;
    let mut iterations_run = 0;

    for iteration in 0..=config.iterations {
        let lml = model.log_marginal_likelihood();
        if !lml.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration,
                snapshot: params,
            });
        }
        if let Some(&prev) = trace.last() {
            let delta: f64 = lml - prev;
            if delta.abs() < config.tolerance {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        trace.push(lml);
        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, model.clone()));
        }
        if iteration == config.iterations {
            break;
        }
        if streak >= config.patience {
            converged = true;
            break;
        }
        let grad = model.lml_gradient();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective {
                iteration,
                snapshot: params,
            });
        }
        let loss_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut params, &loss_grad, &decay_mask);
        model = model.with_params(&params)?;
        iterations_run += 1;
    }

    let (_, model) = best.expect("at least one evaluation");
    Ok(FitOutcome {
        model,
        trace,
        iterations_run,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iterations_returns_initialization() {
        let ts = TrainingSet::new(
            vec![0.1, 0.4, 0.7, 0.2, 0.5, 0.9],
            vec![0, 0, 0, 1, 1, 1],
            vec![0.3, -0.2, 0.8, 1.0, 1.4, 0.6],
        )
        .unwrap();
        let cfg = OptimizerConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = fit(&ts, &cfg).unwrap();
        let init = initial_model(&ts, &cfg).unwrap();
        assert_eq!(out.model.params(), init.params());
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.iterations_run, 0);
    }

    #[test]
    fn constant_outputs_pin_the_means() {
        let times: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let mut t = times.clone();
        t.extend(&times);
        let outputs: Vec<usize> = (0..16).map(|i| i / 8).collect();
        let values: Vec<f64> = outputs
            .iter()
            .map(|&o| if o == 0 { 1.5 } else { -0.7 })
            .collect();
        let ts = TrainingSet::new(t, outputs, values).unwrap();
        let cfg = OptimizerConfig {
            iterations: 300,
            ..Default::default()
        };
        let out = fit(&ts, &cfg).unwrap();
        assert!((out.model.means[0] - 1.5).abs() < 1e-3);
        assert!((out.model.means[1] + 0.7).abs() < 1e-3);
        let init = initial_model(&ts, &cfg).unwrap();
        assert!(out.model.noise_variance() < init.noise_variance());
        assert!(out.model.kernel.se.variance() < init.kernel.se.variance());
        assert!(out.final_lml() >= out.initial_lml());
    }

    #[test]
    fn rejects_sparse_outputs_and_bad_rank() {
        let ts = TrainingSet::new(vec![0.1, 0.2, 0.3], vec![0, 0, 1], vec![0.0; 3]).unwrap();
        assert!(fit(&ts, &OptimizerConfig::default()).is_err());
        let ts = TrainingSet::new(vec![0.1, 0.2], vec![0, 0], vec![0.0, 1.0]).unwrap();
        assert!(fit(&ts, &OptimizerConfig::default()).is_err()); // rank 2 > 1 output
    }
}
