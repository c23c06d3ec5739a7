//! Stationary covariance functions on normalized time and the intrinsic
//! coregionalisation (ICM) construction that couples them across outputs.
//!
//! Every positive hyperparameter is stored as its natural logarithm and
//! exponentiated on use, with a floor of [`PARAM_FLOOR`] after
//! exponentiation. Gradients are taken with respect to the stored log values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Lower bound applied to every exponentiated hyperparameter.
pub const PARAM_FLOOR: f64 = 1e-10;

/// Number of scalar hyperparameters in a [`CompositeKernelSpec`].
pub const N_KERNEL_PARAMS: usize = 7;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[inline]
pub(crate) fn floored(log_value: f64) -> f64 {
    log_value.exp().max(PARAM_FLOOR)
}

/// Derivative of `floored(x)` with respect to `x`.
#[inline]
pub(crate) fn floored_dlog(log_value: f64) -> f64 {
    let v = log_value.exp();
    if v > PARAM_FLOOR {
        v
    } else {
        0.0
    }
}

/// Variance, length-scale and (periodic kernel only) period of one sub-kernel,
/// held in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct SubKernelParams {
    pub log_variance: f64,
    pub log_lengthscale: f64,
    pub log_period: Option<f64>,
}

impl SubKernelParams {
    pub fn new(variance: f64, lengthscale: f64) -> Self {
        Self {
            log_variance: variance.ln(),
            log_lengthscale: lengthscale.ln(),
            log_period: None,
        }
    }

    pub fn with_period(variance: f64, lengthscale: f64, period: f64) -> Self {
        Self {
            log_period: Some(period.ln()),
            ..Self::new(variance, lengthscale)
        }
    }

    pub fn variance(&self) -> f64 {
        floored(self.log_variance)
    }

    pub fn lengthscale(&self) -> f64 {
        floored(self.log_lengthscale)
    }

    /// Period of a periodic kernel; `1.0` (one gait cycle) when unset.
    pub fn period(&self) -> f64 {
        self.log_period.map(floored).unwrap_or(1.0)
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = !self.log_variance.is_nan()
            && !self.log_lengthscale.is_nan()
            && self.log_variance < f64::INFINITY
            && self.log_lengthscale < f64::INFINITY
            && self.log_period.is_none_or(|p| p.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{name} kernel parameters are not finite"
            )))
        }
    }
}

/// Squared exponential kernel.
pub fn eval_se(params: &SubKernelParams, t: f64, t_prime: f64) -> f64 {
    let l = params.lengthscale();
    let d = t - t_prime;
    params.variance() * (-(d * d) / (2.0 * l * l)).exp()
}

/// Matérn kernel with smoothness 3/2.
pub fn eval_matern32(params: &SubKernelParams, t: f64, t_prime: f64) -> f64 {
    let a = SQRT3 * (t - t_prime).abs() / params.lengthscale();
    params.variance() * (1.0 + a) * (-a).exp()
}

/// Exp-sine-squared periodic kernel.
pub fn eval_periodic(params: &SubKernelParams, t: f64, t_prime: f64) -> f64 {
    let l = params.lengthscale();
    let s = (std::f64::consts::PI * (t - t_prime).abs() / params.period()).sin();
    params.variance() * (-2.0 * s * s / (l * l)).exp()
}

/// Hyperparameters of the periodic + SE + Matérn-3/2 sum kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeKernelSpec {
    pub periodic: SubKernelParams,
    pub se: SubKernelParams,
    pub matern32: SubKernelParams,
}

impl Default for CompositeKernelSpec {
    /// Unit variances, length-scales of 0.2 and a period of one cycle.
    fn default() -> Self {
        Self {
            periodic: SubKernelParams::with_period(1.0, 0.2, 1.0),
            se: SubKernelParams::new(1.0, 0.2),
            matern32: SubKernelParams::new(1.0, 0.2),
        }
    }
}

impl CompositeKernelSpec {
    pub fn validate(&self) -> Result<()> {
        self.periodic.check("periodic")?;
        self.se.check("squared exponential")?;
        self.matern32.check("Matern 3/2")
    }

    /// Unconstrained parameters in canonical order: periodic (log variance,
    /// log length-scale, log period), SE (log variance, log length-scale),
    /// Matérn (log variance, log length-scale).
    pub fn to_vec(&self) -> [f64; N_KERNEL_PARAMS] {
        [
            self.periodic.log_variance,
            self.periodic.log_lengthscale,
            self.periodic.log_period.unwrap_or(0.0),
            self.se.log_variance,
            self.se.log_lengthscale,
            self.matern32.log_variance,
            self.matern32.log_lengthscale,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            periodic: SubKernelParams {
                log_variance: v[0],
                log_lengthscale: v[1],
                log_period: Some(v[2]),
            },
            se: SubKernelParams {
                log_variance: v[3],
                log_lengthscale: v[4],
                log_period: None,
            },
            matern32: SubKernelParams {
                log_variance: v[5],
                log_lengthscale: v[6],
                log_period: None,
            },
        }
    }

    pub const PARAM_NAMES: [&'static str; N_KERNEL_PARAMS] = [
        "periodic.log_variance",
        "periodic.log_lengthscale",
        "periodic.log_period",
        "se.log_variance",
        "se.log_lengthscale",
        "matern32.log_variance",
        "matern32.log_lengthscale",
    ];
}

/// Sum of the three sub-kernels.
pub fn eval_composite(spec: &CompositeKernelSpec, t: f64, t_prime: f64) -> f64 {
    eval_periodic(&spec.periodic, t, t_prime)
        + eval_se(&spec.se, t, t_prime)
        + eval_matern32(&spec.matern32, t, t_prime)
}

/// Composite kernel value together with its derivatives with respect to the
/// seven log-space parameters (same order as [`CompositeKernelSpec::to_vec`]).
pub fn composite_with_grad(
    spec: &CompositeKernelSpec,
    t: f64,
    t_prime: f64,
) -> (f64, [f64; N_KERNEL_PARAMS]) {
    let r = (t - t_prime).abs();
    let mut g = [0.0; N_KERNEL_PARAMS];

    // periodic
    let p = &spec.periodic;
    let (lp, period) = (p.lengthscale(), p.period());
    let u = std::f64::consts::PI * r / period;
    let s = u.sin();
    let shape_per = (-2.0 * s * s / (lp * lp)).exp();
    let k_per = p.variance() * shape_per;
    g[0] = floored_dlog(p.log_variance) * shape_per;
    g[1] = k_per * 4.0 * s * s / (lp * lp) * floored_dlog(p.log_lengthscale) / lp;
    g[2] = match p.log_period {
        Some(lpp) => k_per * 2.0 * u * (2.0 * u).sin() / (lp * lp) * floored_dlog(lpp) / period,
        None => 0.0,
    };

    // squared exponential
    let q = &spec.se;
    let ls = q.lengthscale();
    let shape_se = (-(r * r) / (2.0 * ls * ls)).exp();
    let k_se = q.variance() * shape_se;
    g[3] = floored_dlog(q.log_variance) * shape_se;
    g[4] = k_se * r * r / (ls * ls) * floored_dlog(q.log_lengthscale) / ls;

    // Matérn 3/2
    let m = &spec.matern32;
    let lm = m.lengthscale();
    let a = SQRT3 * r / lm;
    let e = (-a).exp();
    let k_mat = m.variance() * (1.0 + a) * e;
    g[5] = floored_dlog(m.log_variance) * (1.0 + a) * e;
    g[6] = m.variance() * a * a * e * floored_dlog(m.log_lengthscale) / lm;

    (k_per + k_se + k_mat, g)
}

/// Low-rank-plus-diagonal factorization of the coregionalisation matrix,
/// `B = W Wᵀ + diag(κ)`, with κ stored in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct CoregionalizationFactor {
    pub w: DMatrix<f64>,
    pub log_kappa: DVector<f64>,
}

impl CoregionalizationFactor {
    pub fn new(w: DMatrix<f64>, kappa: &[f64]) -> Result<Self> {
        if w.nrows() != kappa.len() {
            return Err(Error::LengthMismatch {
                what: "coregionalisation rows vs kappa",
                left: w.nrows(),
                right: kappa.len(),
            });
        }
        if w.ncols() == 0 || w.ncols() > w.nrows() {
            return Err(Error::invalid(format!(
                "coregionalisation rank {} outside 1..={}",
                w.ncols(),
                w.nrows()
            )));
        }
        if kappa.iter().any(|k| *k < 0.0 || !k.is_finite()) {
            return Err(Error::invalid(
                "kappa entries must be finite and non-negative",
            ));
        }
        Ok(Self {
            w,
            log_kappa: DVector::from_iterator(kappa.len(), kappa.iter().map(|k| k.ln())),
        })
    }

    /// Initial factor: W entries drawn from N(0, 0.5²), κ = 0.5.
    pub fn init<R: Rng + ?Sized>(outputs: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, 0.5).expect("valid normal");
        let w = DMatrix::from_fn(outputs, rank, |_, _| normal.sample(rng));
        Self::new(w, &vec![0.5; outputs])
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn kappa(&self) -> DVector<f64> {
        self.log_kappa.map(floored)
    }

    pub fn n_params(&self) -> usize {
        self.outputs() * self.rank() + self.outputs()
    }

    /// Dense `B = W Wᵀ + diag(κ)`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let mut b = &self.w * self.w.transpose();
        for (m, k) in self.kappa().iter().enumerate() {
            b[(m, m)] += k;
        }
        b
    }

    /// Unconstrained parameters: W row-major, then log κ.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for m in 0..self.outputs() {
            for r in 0..self.rank() {
                v.push(self.w[(m, r)]);
            }
        }
        v.extend(self.log_kappa.iter());
        v
    }

    pub fn set_from_slice(&mut self, v: &[f64]) {
        let (mm, rr) = (self.outputs(), self.rank());
        for m in 0..mm {
            for r in 0..rr {
                self.w[(m, r)] = v[m * rr + r];
            }
        }
        for m in 0..mm {
            self.log_kappa[m] = v[mm * rr + m];
        }
    }
}

fn check_output(index: usize, outputs: usize) -> Result<()> {
    if index < outputs {
        Ok(())
    } else {
        Err(Error::OutputIndex { index, outputs })
    }
}

/// Cross-output covariance `B[m, m'] · k_t(t, t')`.
pub fn icm_covariance(
    spec: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    m: usize,
    m_prime: usize,
    t: f64,
    t_prime: f64,
) -> Result<f64> {
    let outputs = coreg.outputs();
    check_output(m, outputs)?;
    check_output(m_prime, outputs)?;
    let mut b = coreg.w.row(m).dot(&coreg.w.row(m_prime));
    if m == m_prime {
        b += floored(coreg.log_kappa[m]);
    }
    Ok(b * eval_composite(spec, t, t_prime))
}

fn check_inputs(coreg: &CoregionalizationFactor, times: &[f64], outputs: &[usize]) -> Result<()> {
    if times.len() != outputs.len() {
        return Err(Error::LengthMismatch {
            what: "times vs outputs",
            left: times.len(),
            right: outputs.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::invalid("at least one input point is required"));
    }
    for &o in outputs {
        check_output(o, coreg.outputs())?;
    }
    Ok(())
}

/// Gram matrix of the ICM kernel over paired (time, output) inputs.
pub fn gram_matrix(
    spec: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    times: &[f64],
    outputs: &[usize],
) -> Result<DMatrix<f64>> {
    check_inputs(coreg, times, outputs)?;
    let b = coreg.b_matrix();
    let n = times.len();
    let mut k = DMatrix::zeros(n, n);
    let table = PairTable::build(spec, times);
    for i in 0..n {
        for j in 0..=i {
            let kt = match &table {
                Some(t) => t.get(i, j).0,
                None => eval_composite(spec, times[i], times[j]),
            };
            let v = b[(outputs[i], outputs[j])] * kt;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-covariance between query points and training points.
pub fn cross_covariance(
    spec: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    query_times: &[f64],
    query_outputs: &[usize],
    times: &[f64],
    outputs: &[usize],
) -> Result<DMatrix<f64>> {
    check_inputs(coreg, query_times, query_outputs)?;
    check_inputs(coreg, times, outputs)?;
    let b = coreg.b_matrix();
    Ok(DMatrix::from_fn(query_times.len(), times.len(), |i, j| {
        b[(query_outputs[i], outputs[j])] * eval_composite(spec, query_times[i], times[j])
    }))
}

/// Total number of kernel-side unconstrained parameters (sub-kernels, W, log κ).
pub fn n_gradient_params(coreg: &CoregionalizationFactor) -> usize {
    N_KERNEL_PARAMS + coreg.n_params()
}

/// `∂K/∂θ` for every kernel-side unconstrained parameter, ordered as the seven
/// sub-kernel log parameters, then W row-major, then log κ.
pub fn kernel_gradients(
    spec: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    times: &[f64],
    outputs: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    check_inputs(coreg, times, outputs)?;
    let n = times.len();
    let (mm, rr) = (coreg.outputs(), coreg.rank());
    let b = coreg.b_matrix();
    let mut grads = vec![DMatrix::zeros(n, n); n_gradient_params(coreg)];
    for i in 0..n {
        for j in 0..=i {
            let (oi, oj) = (outputs[i], outputs[j]);
            let (k, dk) = composite_with_grad(spec, times[i], times[j]);
            let mut set = |p: usize, v: f64| {
                grads[p][(i, j)] = v;
                grads[p][(j, i)] = v;
            };
            for (p, d) in dk.iter().enumerate() {
                set(p, b[(oi, oj)] * d);
            }
            // ∂B[oi,oj]/∂W[a,r] = δ(oi,a) W[oj,r] + δ(oj,a) W[oi,r]
            for r in 0..rr {
                let base = N_KERNEL_PARAMS + r;
                if oi == oj {
                    set(base + oi * rr, 2.0 * coreg.w[(oi, r)] * k);
                } else {
                    set(base + oi * rr, coreg.w[(oj, r)] * k);
                    set(base + oj * rr, coreg.w[(oi, r)] * k);
                }
            }
            if oi == oj {
                set(
                    N_KERNEL_PARAMS + mm * rr + oi,
                    floored_dlog(coreg.log_kappa[oi]) * k,
                );
            }
        }
    }
    Ok(grads)
}

/// Kernel values and gradients per distinct time pair. Multi-output training
/// sets usually repeat each time once per output, so this cuts the kernel
/// evaluations by roughly the square of the output count.
struct PairTable {
    slot: Vec<usize>,
    u: usize,
    entries: Vec<(f64, [f64; N_KERNEL_PARAMS])>,
}

impl PairTable {
    fn build(spec: &CompositeKernelSpec, times: &[f64]) -> Option<Self> {
        let mut distinct: Vec<f64> = times.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| a.to_bits() == b.to_bits());
        let u = distinct.len();
        if 2 * u > times.len() {
            return None;
        }
        let slot = times
            .iter()
            .map(|t| {
                distinct
                    .binary_search_by(|d| d.total_cmp(t))
                    .expect("time is present")
            })
            .collect();
        let mut entries = vec![(0.0, [0.0; N_KERNEL_PARAMS]); u * u];
        for a in 0..u {
            for b in 0..=a {
                let e = composite_with_grad(spec, distinct[a], distinct[b]);
                entries[a * u + b] = e;
                entries[b * u + a] = e;
            }
        }
        Some(Self { slot, u, entries })
    }

    fn get(&self, i: usize, j: usize) -> (f64, [f64; N_KERNEL_PARAMS]) {
        self.entries[self.slot[i] * self.u + self.slot[j]]
    }
}

/// Contractions `Σᵢⱼ Qᵢⱼ ∂Kᵢⱼ/∂θ` for every kernel-side parameter, without
/// materializing the gradient matrices. `q` must be symmetric.
pub(crate) fn contract_gradients(
    spec: &CompositeKernelSpec,
    coreg: &CoregionalizationFactor,
    times: &[f64],
    outputs: &[usize],
    q: &DMatrix<f64>,
) -> Vec<f64> {
    let n = times.len();
    let (mm, rr) = (coreg.outputs(), coreg.rank());
    let b = coreg.b_matrix();
    let mut kernel_part = [0.0; N_KERNEL_PARAMS];
    // c[m, m'] = Σ over pairs with outputs (m, m') of Q k
    let mut c = DMatrix::<f64>::zeros(mm, mm);
    let table = PairTable::build(spec, times);
    for i in 0..n {
        for j in 0..=i {
            let weight = if i == j { 1.0 } else { 2.0 };
            let (oi, oj) = (outputs[i], outputs[j]);
            let (k, dk) = match &table {
                Some(t) => t.get(i, j),
                None => composite_with_grad(spec, times[i], times[j]),
            };
            let qw = q[(i, j)] * weight;
            let bq = b[(oi, oj)] * qw;
            for (acc, d) in kernel_part.iter_mut().zip(dk.iter()) {
                *acc += bq * d;
            }
            if i == j {
                c[(oi, oi)] += qw * k;
            } else {
                c[(oi, oj)] += 0.5 * qw * k;
                c[(oj, oi)] += 0.5 * qw * k;
            }
        }
    }
    let mut out = Vec::with_capacity(N_KERNEL_PARAMS + coreg.n_params());
    out.extend_from_slice(&kernel_part);
    let cw = (&c + c.transpose()) * &coreg.w;
    for m in 0..mm {
        for r in 0..rr {
            out.push(cw[(m, r)]);
        }
    }
    for m in 0..mm {
        out.push(c[(m, m)] * floored_dlog(coreg.log_kappa[m]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn se_examples() {
        let p = SubKernelParams::new(2.0, 0.5);
        assert_relative_eq!(eval_se(&p, 0.3, 0.3), 2.0, epsilon = 1e-15);
        let p = SubKernelParams::new(1.0, 1.0);
        assert_relative_eq!(
            eval_se(&p, 0.0, 1.0),
            0.606_530_659_712_633_4,
            max_relative = 1e-14
        );
        let p = SubKernelParams::new(1.0, 1e6);
        assert!((eval_se(&p, 0.0, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matern_examples() {
        let p = SubKernelParams::new(3.0, 0.2);
        assert_relative_eq!(eval_matern32(&p, 0.4, 0.4), 3.0, epsilon = 1e-15);
        let p = SubKernelParams::new(1.0, 3f64.sqrt());
        assert_relative_eq!(
            eval_matern32(&p, 0.0, 1.0),
            0.735_758_882_342_884_6,
            max_relative = 1e-14
        );
        let p = SubKernelParams::new(1.0, 0.01);
        assert!(eval_matern32(&p, 0.0, 1.0) < 1e-30);
    }

    #[test]
    fn periodic_examples() {
        let p = SubKernelParams::with_period(1.0, 1.0, 0.5);
        assert_relative_eq!(eval_periodic(&p, 0.1, 0.6), 1.0, epsilon = 1e-12);
        let p = SubKernelParams::with_period(1.0, 1.0, 1.0);
        assert_relative_eq!(
            eval_periodic(&p, 0.0, 0.5),
            0.135_335_283_236_612_7,
            max_relative = 1e-14
        );
        let p = SubKernelParams::with_period(4.0, 2.0, 1.0);
        assert_eq!(eval_periodic(&p, 0.0, 0.0), 4.0);
    }

    #[test]
    fn composite_examples() {
        let unit = CompositeKernelSpec {
            periodic: SubKernelParams::with_period(1.0, 1.0, 1.0),
            se: SubKernelParams::new(1.0, 1.0),
            matern32: SubKernelParams::new(1.0, 1.0),
        };
        assert_relative_eq!(eval_composite(&unit, 0.2, 0.2), 3.0, epsilon = 1e-15);
        // exp(-2) + exp(-1/8) + (1 + √3/2) exp(-√3/2)
        assert_relative_eq!(
            eval_composite(&unit, 0.0, 0.5),
            1.802_719_839_778_658_7,
            max_relative = 1e-12
        );

        let zero = CompositeKernelSpec {
            periodic: SubKernelParams::with_period(0.0, 1.0, 1.0),
            se: SubKernelParams::new(0.0, 1.0),
            matern32: SubKernelParams::new(0.0, 1.0),
        };
        assert_relative_eq!(
            eval_composite(&zero, 0.3, 0.3),
            3.0 * PARAM_FLOOR,
            max_relative = 1e-12
        );
    }

    #[test]
    fn icm_diagonal_b_has_no_cross_covariance() {
        let coreg = CoregionalizationFactor::new(DMatrix::zeros(3, 1), &[1.0; 3]).unwrap();
        let spec = CompositeKernelSpec::default();
        assert_eq!(icm_covariance(&spec, &coreg, 0, 2, 0.1, 0.4).unwrap(), 0.0);
        assert!(icm_covariance(&spec, &coreg, 1, 1, 0.1, 0.4).unwrap() > 0.0);
    }

    #[test]
    fn icm_rank_one_all_ones_reproduces_time_kernel() {
        let coreg =
            CoregionalizationFactor::new(DMatrix::from_element(4, 1, 1.0), &[0.0; 4]).unwrap();
        let spec = CompositeKernelSpec::default();
        let k = eval_composite(&spec, 0.2, 0.7);
        let v = icm_covariance(&spec, &coreg, 0, 3, 0.2, 0.7).unwrap();
        assert_relative_eq!(v, k, max_relative = 1e-12);
    }

    #[test]
    fn icm_rejects_bad_output_index() {
        let coreg = CoregionalizationFactor::new(DMatrix::zeros(2, 1), &[1.0; 2]).unwrap();
        let err =
            icm_covariance(&CompositeKernelSpec::default(), &coreg, 0, 2, 0.0, 0.0).unwrap_err();
        assert!(matches!(
            err,
            Error::OutputIndex {
                index: 2,
                outputs: 2
            }
        ));
    }

    #[test]
    fn gram_single_point_and_duplicates() {
        let spec = CompositeKernelSpec::default();
        let coreg =
            CoregionalizationFactor::new(DMatrix::from_element(2, 1, 0.5), &[0.3, 0.7]).unwrap();
        let k = gram_matrix(&spec, &coreg, &[0.4], &[1]).unwrap();
        let b = coreg.b_matrix();
        assert_relative_eq!(k[(0, 0)], b[(1, 1)] * 3.0, max_relative = 1e-14);

        let k = gram_matrix(&spec, &coreg, &[0.4, 0.4, 0.9], &[1, 1, 0]).unwrap();
        assert_eq!(k.row(0), k.row(1));
        assert!(matches!(
            gram_matrix(&spec, &coreg, &[0.1, 0.2], &[0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_lag_se_lengthscale_gradient_vanishes() {
        let spec = CompositeKernelSpec::default();
        let coreg =
            CoregionalizationFactor::new(DMatrix::from_element(2, 1, 0.5), &[0.3, 0.7]).unwrap();
        let times = [0.1, 0.5, 0.8];
        let outs = [0, 1, 1];
        let g = kernel_gradients(&spec, &coreg, &times, &outs).unwrap();
        for i in 0..3 {
            assert_eq!(g[4][(i, i)], 0.0);
        }
        // variance gradient identity: ∂K/∂log σ²_SE equals the SE-only Gram
        let b = coreg.b_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let want = b[(outs[i], outs[j])] * eval_se(&spec.se, times[i], times[j]);
                assert_relative_eq!(g[3][(i, j)], want, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn contraction_matches_materialized_gradients() {
        let spec = CompositeKernelSpec {
            periodic: SubKernelParams::with_period(0.7, 0.4, 0.9),
            se: SubKernelParams::new(1.3, 0.3),
            matern32: SubKernelParams::new(0.5, 0.15),
        };
        let w = DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.8]);
        let coreg = CoregionalizationFactor::new(w, &[0.2, 0.4, 0.1]).unwrap();
        let times = [0.05, 0.3, 0.31, 0.77, 0.9];
        let outs = [0, 2, 1, 1, 0];
        let q = DMatrix::from_fn(5, 5, |i, j| {
            ((i + 1) * (j + 1)) as f64 / 7.0 + if i == j { 1.0 } else { 0.0 }
        });
        let mats = kernel_gradients(&spec, &coreg, &times, &outs).unwrap();
        let fast = contract_gradients(&spec, &coreg, &times, &outs, &q);
        for (m, f) in mats.iter().zip(fast.iter()) {
            let slow = m.component_mul(&q).sum();
            assert_relative_eq!(*f, slow, max_relative = 1e-12, epsilon = 1e-14);
        }
    }
}
