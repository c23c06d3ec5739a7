//! Zero-phase Butterworth low-pass filtering as cascaded biquads.

use crate::error::{Error, Result};

/// One second-order section in transposed direct form II, `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Internal state that makes a constant input of 1 produce a constant output.
    fn steady_state(&self) -> [f64; 2] {
        [1.0 - self.b[0], self.b[2] - self.a[1]]
    }

    fn run(&self, x: &mut [f64], level: f64) {
        let [z0, z1] = self.steady_state();
        let (mut s0, mut s1) = (z0 * level, z1 * level);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s0;
            s0 = self.b[1] * input - self.a[0] * y + s1;
            s1 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }

    /// Magnitude of the frequency response at normalized frequency `f / fs`.
    pub fn magnitude(&self, normalized_freq: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * normalized_freq;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = -(self.b[1] * s1 + self.b[2] * s2);
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = -(self.a[0] * s1 + self.a[1] * s2);
        ((num_re * num_re + num_im * num_im) / (den_re * den_re + den_im * den_im)).sqrt()
    }
}

/// Digital Butterworth low-pass of even `order` via the bilinear transform
/// with frequency pre-warping.
pub fn butterworth_lowpass(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<Vec<Biquad>> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "filter order {order} must be even and positive"
        )));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    Ok((0..order / 2)
        .map(|i| {
            let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.sin());
            let norm = 1.0 / (1.0 + k / q + k2);
            let b0 = k2 * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
            }
        })
        .collect())
}

/// Forward-backward application with odd-reflection padding at both ends.
/// The effective magnitude response is the square of the single-pass one.
pub fn filtfilt(sections: &[Biquad], signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n < 2 {
        return signal.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * signal[0] - signal[i]);
    }
    ext.extend_from_slice(signal);
    for i in 1..=pad {
        ext.push(2.0 * signal[n - 1] - signal[n - 1 - i]);
    }
    for s in sections {
        let level = ext[0];
        s.run(&mut ext, level);
    }
    ext.reverse();
    for s in sections {
        let level = ext[0];
        s.run(&mut ext, level);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth low-pass of a uniformly sampled signal.
pub fn lowpass(
    signal: &[f64],
    sample_rate_hz: f64,
    cutoff_hz: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let sections = butterworth_lowpass(order, cutoff_hz, sample_rate_hz)?;
    Ok(filtfilt(&sections, signal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinusoid(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn central_amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        x[n / 4..3 * n / 4]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn unit_dc_gain() {
        for order in [2, 4, 6] {
            let sections = butterworth_lowpass(order, 6.0, 30.0).unwrap();
            let gain: f64 = sections.iter().map(|s| s.magnitude(0.0)).product();
            assert!((gain - 1.0).abs() < 1e-12);
            let y = filtfilt(&sections, &[2.5; 40]);
            assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-10));
        }
    }

    #[test]
    fn passband_and_stopband() {
        let fs = 30.0;
        let low = lowpass(&sinusoid(1.0, fs, 600), fs, 6.0, 4).unwrap();
        assert!((central_amplitude(&low) - 1.0).abs() < 0.01);
        let high = lowpass(&sinusoid(12.0, fs, 600), fs, 6.0, 4).unwrap();
        assert!(central_amplitude(&high) < 0.1);
    }

    #[test]
    fn analytic_magnitude_matches_butterworth_shape() {
        // |H|² = 1 / (1 + (tan(πf/fs) / tan(πfc/fs))^(2N))
        let sections = butterworth_lowpass(4, 6.0, 30.0).unwrap();
        for f in [0.5, 3.0, 6.0, 9.0, 12.0] {
            let got: f64 = sections.iter().map(|s| s.magnitude(f / 30.0)).product();
            let ratio = (PI * f / 30.0).tan() / (PI * 6.0 / 30.0).tan();
            let want = 1.0 / (1.0 + ratio.powi(8)).sqrt();
            assert!((got - want).abs() < 1e-12, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn filtering_twice_keeps_band_limited_signal() {
        let x = sinusoid(1.0, 30.0, 600);
        let once = lowpass(&x, 30.0, 6.0, 4).unwrap();
        let twice = lowpass(&once, 30.0, 6.0, 4).unwrap();
        let a1 = central_amplitude(&once);
        let a2 = central_amplitude(&twice);
        assert!(((a2 - a1) / a1).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_design() {
        assert!(butterworth_lowpass(4, 15.0, 30.0).is_err());
        assert!(butterworth_lowpass(3, 6.0, 30.0).is_err());
        assert!(butterworth_lowpass(4, 0.0, 30.0).is_err());
    }
}
