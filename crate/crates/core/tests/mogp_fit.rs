use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use gaitgp::kernels::{gram_matrix, CompositeKernelSpec, CoregionalizationFactor, SubKernelParams};
use gaitgp::mogp::{self, OptimizerConfig, TrainingSet};

/// Six outputs drawn jointly from a known ICM prior, 60 shared random times.
fn prior_sample(seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (6, 60);
    let spec = CompositeKernelSpec {
        periodic: SubKernelParams::with_period(1.0, 0.8, 1.0),
        se: SubKernelParams::new(0.3, 0.3),
        matern32: SubKernelParams::new(0.1, 0.2),
    };
    let w = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0));
    let kappa: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
    let coreg = CoregionalizationFactor::new(w, &kappa).unwrap();
    let grid: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let times: Vec<f64> = (0..m).flat_map(|_| grid.iter().copied()).collect();
    let outputs: Vec<usize> = (0..m).flat_map(|o| std::iter::repeat_n(o, n)).collect();
    let mut k = gram_matrix(&spec, &coreg, &times, &outputs).unwrap();
    for i in 0..k.nrows() {
        k[(i, i)] += 1e-8;
    }
    let z = DVector::from_fn(times.len(), |_, _| StandardNormal.sample(&mut rng));
    let f = k.cholesky().unwrap().l() * z;
    let values = f
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + 0.1 * e
        })
        .collect();
    TrainingSet::new(times, outputs, values).unwrap()
}

#[test]
fn smoothed_lml_trace_is_non_decreasing() {
    let training = prior_sample(21);
    let config = OptimizerConfig {
        iterations: 2000,
        seed: 21,
        ..Default::default()
    };
    let out = mogp::fit(&training, &config).unwrap();
    let window = 20;
    let smoothed: Vec<f64> = out
        .trace
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let worst = smoothed
        .windows(2)
        .map(|p| p[0] - p[1])
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(smoothed.len() > 1);
    assert!(worst <= 0.0, "smoothed trace drops by {worst}");
    assert!(out.final_lml() > out.initial_lml());
}

#[test]
fn fitting_is_deterministic_for_a_seed() {
    let training = prior_sample(5);
    let config = OptimizerConfig {
        iterations: 60,
        seed: 9,
        ..Default::default()
    };
    let a = mogp::fit(&training, &config).unwrap();
    let b = mogp::fit(&training, &config).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.params(), b.model.params());
    let other = mogp::fit(&training, &OptimizerConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.model.params(), other.model.params());
}
