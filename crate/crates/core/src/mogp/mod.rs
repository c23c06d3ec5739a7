//! Exact multi-output Gaussian process regression with an ICM kernel.
//!
//! The model carries constant per-output means, a single homoscedastic noise
//! variance and a cached Cholesky factor of `K + σ_n² I` over its training
//! set. Unconstrained parameters are laid out as: seven sub-kernel log
//! parameters, W row-major, log κ, per-output means, log noise.

mod adam;
mod fit;
mod io;

pub use adam::Adam;
pub use fit::{fit, FitOutcome, OptimizerConfig};
pub use io::{load_model, model_from_document, model_to_document, save_model, MOGP_SCHEMA};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{
    self, contract_gradients, floored, floored_dlog, CompositeKernelSpec, CoregionalizationFactor,
    N_KERNEL_PARAMS, PARAM_FLOOR,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Paired observations: `values[i]` is output `outputs[i]` observed at `times[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub times: Vec<f64>,
    pub outputs: Vec<usize>,
    pub values: Vec<f64>,
}

impl TrainingSet {
    pub fn new(times: Vec<f64>, outputs: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if times.len() != outputs.len() {
            return Err(Error::LengthMismatch {
                what: "training times vs outputs",
                left: times.len(),
                right: outputs.len(),
            });
        }
        if times.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "training times vs values",
                left: times.len(),
                right: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("training time {t} outside [0, 1]")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("training values must be finite"));
        }
        Ok(Self {
            times,
            outputs,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of outputs implied by the largest output index.
    pub fn n_outputs(&self) -> usize {
        self.outputs.iter().max().map_or(0, |m| m + 1)
    }

    pub fn counts_per_output(&self, outputs: usize) -> Vec<usize> {
        let mut counts = vec![0; outputs];
        for &o in &self.outputs {
            if o < outputs {
                counts[o] += 1;
            }
        }
        counts
    }

    /// Fitting requires at least two points on every output.
    pub fn check_fittable(&self, outputs: usize) -> Result<()> {
        if let Some(&o) = self.outputs.iter().find(|&&o| o >= outputs) {
            return Err(Error::OutputIndex { index: o, outputs });
        }
        let counts = self.counts_per_output(outputs);
        if let Some(m) = counts.iter().position(|&c| c < 2) {
            return Err(Error::invalid(format!(
                "output {m} has {} training points; at least 2 are required",
                counts[m]
            )));
        }
        Ok(())
    }

    /// Per-output sample means (zero for outputs without data).
    pub fn output_means(&self, outputs: usize) -> DVector<f64> {
        let mut sums = DVector::zeros(outputs);
        let counts = self.counts_per_output(outputs);
        for (&o, &v) in self.outputs.iter().zip(&self.values) {
            sums[o] += v;
        }
        for m in 0..outputs {
            if counts[m] > 0 {
                sums[m] /= counts[m] as f64;
            }
        }
        sums
    }

    /// SHA-256 over the shortest round-trip rendering of every triple.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for ((t, o), v) in self.times.iter().zip(&self.outputs).zip(&self.values) {
            h.update(format!("{t:?},{o},{v:?}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Cholesky factorization of the training covariance and derived solves.
#[derive(Clone, Debug)]
struct Factorization {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    centered: DVector<f64>,
    jitter: f64,
}

fn centered_values(training: &TrainingSet, means: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        training.len(),
        training
            .outputs
            .iter()
            .zip(&training.values)
            .map(|(&o, &v)| v - means[o]),
    )
}

/// Cholesky of `matrix`, escalating diagonal jitter from 1e-8·mean(diag) by
/// factors of ten up to 1e-2·mean(diag).
pub(crate) fn cholesky_with_jitter(matrix: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(matrix.clone()) {
        return Ok((c, 0.0));
    }
    let n = matrix.nrows();
    let mean_diag = (matrix.trace() / n as f64).abs().max(PARAM_FLOOR);
    let mut jitter = 1e-8 * mean_diag;
    while jitter <= 1e-2 * mean_diag * (1.0 + 1e-12) {
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::IllConditioned {
        jitter: jitter / 10.0,
    })
}

/// `K⁻¹ = L⁻ᵀ L⁻¹`, inverting the factor column by column from the
/// diagonal down.
fn inverse_from_cholesky(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let l = chol.l_dirty();
    let n = l.nrows();
    let mut linv = DMatrix::<f64>::zeros(n, n);
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j..].fill(0.0);
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / l[(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                let col = &l.as_slice()[k * n + k + 1..(k + 1) * n];
                for (xi, lik) in x[k + 1..].iter_mut().zip(col) {
                    *xi -= lik * xk;
                }
            }
        }
        linv.as_mut_slice()[j * n + j..(j + 1) * n].copy_from_slice(&x[j..]);
    }
    linv.transpose() * &linv
}

/// Fitted (or hand-constructed) multi-output GP.
#[derive(Clone, Debug)]
pub struct MoGPModel {
    pub kernel: CompositeKernelSpec,
    pub coreg: CoregionalizationFactor,
    pub means: DVector<f64>,
    pub log_noise: f64,
    pub training: TrainingSet,
    pub config: Option<OptimizerConfig>,
    cache: Factorization,
}

impl MoGPModel {
    pub fn new(
        kernel: CompositeKernelSpec,
        coreg: CoregionalizationFactor,
        means: DVector<f64>,
        noise_variance: f64,
        training: TrainingSet,
    ) -> Result<Self> {
        Self::from_log_noise(kernel, coreg, means, noise_variance.ln(), training)
    }

    pub(crate) fn from_log_noise(
        kernel: CompositeKernelSpec,
        coreg: CoregionalizationFactor,
        means: DVector<f64>,
        log_noise: f64,
        training: TrainingSet,
    ) -> Result<Self> {
        kernel.validate()?;
        if means.len() != coreg.outputs() {
            return Err(Error::LengthMismatch {
                what: "means vs outputs",
                left: means.len(),
                right: coreg.outputs(),
            });
        }
        if log_noise.is_nan() || log_noise == f64::INFINITY {
            return Err(Error::invalid("noise variance must be finite"));
        }
        if let Some(&o) = training.outputs.iter().find(|&&o| o >= coreg.outputs()) {
            return Err(Error::OutputIndex {
                index: o,
                outputs: coreg.outputs(),
            });
        }
        let cache = factorize(&kernel, &coreg, &means, log_noise, &training)?;
        Ok(Self {
            kernel,
            coreg,
            means,
            log_noise,
            training,
            config: None,
            cache,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.coreg.outputs()
    }

    pub fn noise_variance(&self) -> f64 {
        floored(self.log_noise)
    }

    /// Diagonal jitter that the Cholesky factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.cache.jitter
    }

    pub fn n_params(&self) -> usize {
        N_KERNEL_PARAMS + self.coreg.n_params() + self.n_outputs() + 1
    }

    /// Unconstrained parameter vector.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.kernel.to_vec());
        v.extend(self.coreg.to_vec());
        v.extend(self.means.iter());
        v.push(self.log_noise);
        v
    }

    /// Names aligned with [`MoGPModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = CompositeKernelSpec::PARAM_NAMES
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in 0..self.n_outputs() {
            for r in 0..self.coreg.rank() {
                names.push(format!("w[{m},{r}]"));
            }
        }
        names.extend((0..self.n_outputs()).map(|m| format!("log_kappa[{m}]")));
        names.extend((0..self.n_outputs()).map(|m| format!("mean[{m}]")));
        names.push("log_noise".into());
        names
    }

    /// A copy with new unconstrained parameters; refactorizes.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                left: params.len(),
                right: self.n_params(),
            });
        }
        let kernel = CompositeKernelSpec::from_slice(&params[..N_KERNEL_PARAMS]);
        let mut coreg = self.coreg.clone();
        let c_end = N_KERNEL_PARAMS + coreg.n_params();
        coreg.set_from_slice(&params[N_KERNEL_PARAMS..c_end]);
        let mm = self.n_outputs();
        let means = DVector::from_column_slice(&params[c_end..c_end + mm]);
        let log_noise = params[c_end + mm];
        let mut model =
            Self::from_log_noise(kernel, coreg, means, log_noise, self.training.clone())?;
        model.config = self.config.clone();
        Ok(model)
    }

    /// Log marginal likelihood of the training values.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let f = &self.cache;
        let n = self.training.len() as f64;
        let half_log_det: f64 = f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * f.centered.dot(&f.alpha) - half_log_det - 0.5 * n * LN_2PI
    }

    /// Gradient of the log marginal likelihood with respect to every
    /// unconstrained parameter, via `½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let f = &self.cache;
        let inv = inverse_from_cholesky(&f.chol);
        let q = &f.alpha * f.alpha.transpose() - &inv;
        let mut grad: Vec<f64> = contract_gradients(
            &self.kernel,
            &self.coreg,
            &self.training.times,
            &self.training.outputs,
            &q,
        )
        .into_iter()
        .map(|g| 0.5 * g)
        .collect();
        let mut mean_grad = vec![0.0; self.n_outputs()];
        for (&o, a) in self.training.outputs.iter().zip(f.alpha.iter()) {
            mean_grad[o] += a;
        }
        grad.extend(mean_grad);
        grad.push(0.5 * q.trace() * floored_dlog(self.log_noise));
        grad
    }

    /// Posterior mean and standard deviation of every output at `query_times`.
    /// Predictive variances include the observation noise.
    pub fn predict(&self, query_times: &[f64]) -> Result<PosteriorPrediction> {
        if query_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("query times must be finite"));
        }
        let mm = self.n_outputs();
        let q = query_times.len();
        let mut warnings = Vec::new();
        let outside = query_times
            .iter()
            .filter(|t| !(0.0..=1.0).contains(*t))
            .count();
        if outside > 0 {
            warnings.push(format!(
                "{outside} query time(s) outside [0, 1]; predictions are extrapolations"
            ));
        }
        if q == 0 {
            return Ok(PosteriorPrediction {
                times: Vec::new(),
                mean: vec![Vec::new(); mm],
                std: vec![Vec::new(); mm],
                clamped: 0,
                warnings,
            });
        }
        let qt: Vec<f64> = (0..mm).flat_map(|_| query_times.iter().copied()).collect();
        let qo: Vec<usize> = (0..mm).flat_map(|m| std::iter::repeat_n(m, q)).collect();
        let cross = kernels::cross_covariance(
            &self.kernel,
            &self.coreg,
            &qt,
            &qo,
            &self.training.times,
            &self.training.outputs,
        )?;
        let mean_vec = &cross * &self.cache.alpha;
        let v = self
            .cache
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&cross.transpose())
            .ok_or(Error::IllConditioned {
                jitter: self.cache.jitter,
            })?;
        let b = self.coreg.b_matrix();
        let noise = self.noise_variance();
        let mut clamped = 0;
        let mut mean = vec![Vec::with_capacity(q); mm];
        let mut std = vec![Vec::with_capacity(q); mm];
        for (idx, (&t, &m)) in qt.iter().zip(&qo).enumerate() {
            let prior = b[(m, m)] * kernels::eval_composite(&self.kernel, t, t);
            let explained = v.column(idx).norm_squared();
            let mut var = prior - explained;
            if var < 0.0 {
                clamped += 1;
                var = 0.0;
            }
            mean[m].push(self.means[m] + mean_vec[idx]);
            std[m].push((var + noise).sqrt());
        }
        Ok(PosteriorPrediction {
            times: query_times.to_vec(),
            mean,
            std,
            clamped,
            warnings,
        })
    }

    /// Coregionalisation matrix and its correlation-normalized form.
    pub fn export_coregionalization(&self) -> Result<CoregionalizationExport> {
        let b = self.coreg.b_matrix();
        let diag = b.diagonal();
        if let Some(m) = diag.iter().position(|d| *d <= 0.0) {
            return Err(Error::invalid(format!(
                "coregionalisation diagonal entry {m} is zero"
            )));
        }
        let correlation = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
            if i == j {
                1.0
            } else {
                b[(i, j)] / (diag[i] * diag[j]).sqrt()
            }
        });
        Ok(CoregionalizationExport {
            covariance: b,
            correlation,
        })
    }
}

fn factorize(
    kernel: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    means: &DVector<f64>,
    log_noise: f64,
    training: &TrainingSet,
) -> Result<Factorization> {
    let mut k = kernels::gram_matrix(kernel, coreg, &training.times, &training.outputs)?;
    let noise = floored(log_noise);
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    let (chol, jitter) = cholesky_with_jitter(k)?;
    let centered = centered_values(training, means);
    let alpha = chol.solve(&centered);
    Ok(Factorization {
        chol,
        alpha,
        centered,
        jitter,
    })
}

/// Posterior summary on a query grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorPrediction {
    pub times: Vec<f64>,
    /// `mean[m][i]` is output `m` at `times[i]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// Number of predictive variances clamped to zero after subtraction.
    pub clamped: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoregionalizationExport {
    pub covariance: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_model(
        times: Vec<f64>,
        outputs: Vec<usize>,
        values: Vec<f64>,
        noise: f64,
    ) -> MoGPModel {
        let mm = outputs.iter().max().unwrap() + 1;
        let w = DMatrix::from_fn(mm, 1, |i, _| 0.4 + 0.1 * i as f64);
        let coreg = CoregionalizationFactor::new(w, &vec![0.3; mm]).unwrap();
        let training = TrainingSet::new(times, outputs, values).unwrap();
        let means = training.output_means(mm);
        MoGPModel::new(
            CompositeKernelSpec::default(),
            coreg,
            means,
            noise,
            training,
        )
        .unwrap()
    }

    #[test]
    fn single_point_at_mean_gives_standard_normal_log_density() {
        // K(t,t) + noise = 1 with the value equal to the mean
        let spec = CompositeKernelSpec {
            periodic: kernels::SubKernelParams::with_period(0.25, 0.2, 1.0),
            se: kernels::SubKernelParams::new(0.25, 0.2),
            matern32: kernels::SubKernelParams::new(0.25, 0.2),
        };
        let coreg = CoregionalizationFactor::new(DMatrix::from_element(1, 1, 1.0), &[0.0]).unwrap();
        let training = TrainingSet::new(vec![0.5], vec![0], vec![2.0]).unwrap();
        let model =
            MoGPModel::new(spec, coreg, DVector::from_element(1, 2.0), 0.25, training).unwrap();
        // B = 1 + 1e-10 floor on κ, so the total variance is 1 + 7.5e-11
        assert_relative_eq!(
            model.log_marginal_likelihood(),
            -0.918_938_533_204_672_7,
            epsilon = 1e-9
        );
    }

    #[test]
    fn zero_residual_mean_gradient_vanishes() {
        let model = small_model(
            vec![0.1, 0.4, 0.7, 0.2],
            vec![0, 0, 1, 1],
            vec![1.0, 1.0, -2.0, -2.0],
            0.1,
        );
        let g = model.lml_gradient();
        let mean_start = N_KERNEL_PARAMS + model.coreg.n_params();
        assert!(g[mean_start].abs() < 1e-12);
        assert!(g[mean_start + 1].abs() < 1e-12);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let mut model = small_model(vec![0.0, 0.02], vec![0, 0], vec![1.0, 1.4], 0.05);
        let mut params = model.params();
        // shrink every length-scale and disable periodic correlation across the gap
        params[1] = (1e-3f64).ln();
        params[4] = (1e-3f64).ln();
        params[6] = (1e-3f64).ln();
        model = model.with_params(&params).unwrap();
        let pred = model.predict(&[0.5]).unwrap();
        assert_relative_eq!(pred.mean[0][0], model.means[0], epsilon = 1e-9);
        let prior =
            model.coreg.b_matrix()[(0, 0)] * kernels::eval_composite(&model.kernel, 0.5, 0.5);
        assert_relative_eq!(
            pred.std[0][0].powi(2),
            prior + model.noise_variance(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn duplicate_points_average_under_noise() {
        let model = small_model(vec![0.3, 0.3, 0.8], vec![0, 0, 0], vec![1.0, 2.0, 1.5], 0.2);
        let pred = model.predict(&[0.3]).unwrap();
        assert!(pred.mean[0][0] > 1.0 && pred.mean[0][0] < 2.0);
    }

    #[test]
    fn noiseless_interpolation() {
        let model = small_model(
            vec![0.05, 0.3, 0.55, 0.8, 0.1, 0.6],
            vec![0, 0, 0, 0, 1, 1],
            vec![0.2, -0.5, 1.1, 0.4, 2.0, 1.0],
            1e-10,
        );
        let pred = model.predict(&model.training.times.clone()).unwrap();
        for (i, (&o, &v)) in model
            .training
            .outputs
            .iter()
            .zip(&model.training.values)
            .enumerate()
        {
            assert!((pred.mean[o][i] - v).abs() < 1e-6);
        }
    }

    #[test]
    fn extrapolation_is_flagged() {
        let model = small_model(vec![0.1, 0.5], vec![0, 0], vec![0.0, 1.0], 0.1);
        let pred = model.predict(&[0.2, 1.3]).unwrap();
        assert_eq!(pred.warnings.len(), 1);
        assert!(model.predict(&[0.2]).unwrap().warnings.is_empty());
    }

    #[test]
    fn coregionalization_export_identity_and_all_ones() {
        let training = TrainingSet::new(vec![0.1, 0.2, 0.3], vec![0, 1, 2], vec![0.0; 3]).unwrap();
        let coreg = CoregionalizationFactor::new(DMatrix::zeros(3, 1), &[1.0; 3]).unwrap();
        let model = MoGPModel::new(
            CompositeKernelSpec::default(),
            coreg,
            DVector::zeros(3),
            0.1,
            training.clone(),
        )
        .unwrap();
        let ex = model.export_coregionalization().unwrap();
        assert_eq!(ex.covariance, DMatrix::identity(3, 3));
        assert_eq!(ex.correlation, DMatrix::identity(3, 3));

        let coreg =
            CoregionalizationFactor::new(DMatrix::from_element(3, 1, 1.0), &[0.0; 3]).unwrap();
        let model = MoGPModel::new(
            CompositeKernelSpec::default(),
            coreg,
            DVector::zeros(3),
            0.1,
            training,
        )
        .unwrap();
        let ex = model.export_coregionalization().unwrap();
        for v in ex.correlation.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![0.1], vec![0, 1], vec![0.0]).is_err());
        assert!(TrainingSet::new(vec![1.5], vec![0], vec![0.0]).is_err());
        assert!(TrainingSet::new(vec![], vec![], vec![]).is_err());
        let ts = TrainingSet::new(vec![0.1, 0.2, 0.3], vec![0, 0, 1], vec![0.0; 3]).unwrap();
        assert!(ts.check_fittable(2).is_err());
        assert!(ts.check_fittable(1).is_err());
    }

    #[test]
    fn jitter_policy() {
        let singular = DMatrix::from_element(2, 2, 1.0);
        let (_, jitter) = cholesky_with_jitter(singular).unwrap();
        assert_relative_eq!(jitter, 1e-8, max_relative = 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(indefinite),
            Err(Error::IllConditioned { .. })
        ));
    }
}
