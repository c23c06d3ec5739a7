//! Regression and temporal-alignment metrics: MAE, R² and DTW.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kv::KvDocument;

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "prediction vs truth",
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} samples")));
    }
    Ok(())
}

/// Mean absolute error, summed left to right.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        sum += (p - t).abs();
    }
    Ok(sum / pred.len() as f64)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let n = truth.len() as f64;
    let mut mean = 0.0;
    for t in truth {
        mean += t;
    }
    mean /= n;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        ss_tot += (t - mean) * (t - mean);
        ss_res += (t - p) * (t - p);
    }
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² is undefined for a constant truth"));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Classical DTW with absolute-difference cost, no band and unit steps.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DTW needs non-empty sequences"));
    }
    // Keep the shorter sequence along the row to bound memory.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let m = short.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in long {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = (x - short[j - 1]).abs();
            cur[j] = cost + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Mean DTW distance over paired channels.
pub fn adtw(pred_set: &[Vec<f64>], truth_set: &[Vec<f64>]) -> Result<f64> {
    if pred_set.len() != truth_set.len() {
        return Err(Error::LengthMismatch {
            what: "prediction vs truth channels",
            left: pred_set.len(),
            right: truth_set.len(),
        });
    }
    if pred_set.is_empty() {
        return Err(Error::invalid("aDTW needs at least one channel"));
    }
    let mut sum = 0.0;
    for (p, t) in pred_set.iter().zip(truth_set) {
        sum += dtw(p, t)?;
    }
    Ok(sum / pred_set.len() as f64)
}

/// Per-channel and channel-averaged MAE, R² and DTW.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub r_squared: f64,
    pub adtw: f64,
    pub per_output: Vec<OutputMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputMetrics {
    pub output: usize,
    pub mae: f64,
    pub r_squared: f64,
    pub dtw: f64,
}

impl MetricReport {
    /// Scores every channel; aggregates are arithmetic means over channels.
    pub fn compute(pred_set: &[Vec<f64>], truth_set: &[Vec<f64>]) -> Result<Self> {
        if pred_set.len() != truth_set.len() || pred_set.is_empty() {
            return Err(Error::LengthMismatch {
                what: "prediction vs truth channels",
                left: pred_set.len(),
                right: truth_set.len(),
            });
        }
        let per_output = pred_set
            .iter()
            .zip(truth_set)
            .enumerate()
            .map(|(output, (p, t))| {
                Ok(OutputMetrics {
                    output,
                    mae: mae(p, t)?,
                    r_squared: r_squared(p, t)?,
                    dtw: dtw(p, t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_outputs(per_output))
    }

    fn from_outputs(per_output: Vec<OutputMetrics>) -> Self {
        let n = per_output.len() as f64;
        let avg = |f: fn(&OutputMetrics) -> f64| per_output.iter().map(f).sum::<f64>() / n;
        Self {
            mae: avg(|o| o.mae),
            r_squared: avg(|o| o.r_squared),
            adtw: avg(|o| o.dtw),
            per_output,
        }
    }

    /// Entry-wise mean of several reports over the same channels.
    pub fn average(reports: &[MetricReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::invalid("no reports to average"))?;
        let channels = first.per_output.len();
        if reports.iter().any(|r| r.per_output.len() != channels) {
            return Err(Error::invalid("reports cover different channels"));
        }
        let n = reports.len() as f64;
        let per_output = (0..channels)
            .map(|c| OutputMetrics {
                output: first.per_output[c].output,
                mae: reports.iter().map(|r| r.per_output[c].mae).sum::<f64>() / n,
                r_squared: reports
                    .iter()
                    .map(|r| r.per_output[c].r_squared)
                    .sum::<f64>()
                    / n,
                dtw: reports.iter().map(|r| r.per_output[c].dtw).sum::<f64>() / n,
            })
            .collect();
        Ok(Self {
            mae: reports.iter().map(|r| r.mae).sum::<f64>() / n,
            r_squared: reports.iter().map(|r| r.r_squared).sum::<f64>() / n,
            adtw: reports.iter().map(|r| r.adtw).sum::<f64>() / n,
            per_output,
        })
    }

    /// Machine-readable key-value form, keys prefixed with `prefix`.
    pub fn write_into(&self, doc: &mut KvDocument, prefix: &str) {
        doc.set_f64(&format!("{prefix}mae"), self.mae);
        doc.set_f64(&format!("{prefix}r_squared"), self.r_squared);
        doc.set_f64(&format!("{prefix}adtw"), self.adtw);
        for o in &self.per_output {
            doc.set_f64(&format!("{prefix}output.{}.mae", o.output), o.mae);
            doc.set_f64(
                &format!("{prefix}output.{}.r_squared", o.output),
                o.r_squared,
            );
            doc.set_f64(&format!("{prefix}output.{}.dtw", o.output), o.dtw);
        }
    }

    /// Whitespace-aligned table, one row per channel plus the mean.
    pub fn to_table(&self, labels: &[&str]) -> String {
        let mut out = format!(
            "{:<12} {:>14} {:>14} {:>14}\n",
            "output", "mae", "r_squared", "dtw"
        );
        for o in &self.per_output {
            let label = labels.get(o.output).copied().unwrap_or("?");
            out.push_str(&format!(
                "{:<12} {:>14.6} {:>14.6} {:>14.6}\n",
                label, o.mae, o.r_squared, o.dtw
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>14.6} {:>14.6} {:>14.6}\n",
            "mean", self.mae, self.r_squared, self.adtw
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let truth = [1.0, 3.0, 2.0, 5.0];
        assert_eq!(r_squared(&truth, &truth).unwrap(), 1.0);
        let mean = [2.75; 4];
        assert_eq!(r_squared(&mean, &truth).unwrap(), 0.0);
        assert!(r_squared(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[1.0], &[4.0]).unwrap(), 3.0);
        // a repeated sample aligns for free
        assert_eq!(dtw(&[0.0, 1.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert!(dtw(&[], &[1.0]).is_err());
    }

    #[test]
    fn adtw_is_the_channel_mean() {
        let pred = vec![vec![0.0], vec![0.0]];
        let truth = vec![vec![2.0], vec![4.0]];
        assert_eq!(adtw(&pred, &truth).unwrap(), 3.0);
        assert!(adtw(&pred, &truth[..1]).is_err());
    }

    #[test]
    fn report_average_and_table() {
        let a = MetricReport::compute(&[vec![1.0, 2.0, 3.0]], &[vec![1.0, 2.0, 4.0]]).unwrap();
        let b = MetricReport::compute(&[vec![1.0, 2.0, 4.0]], &[vec![1.0, 2.0, 4.0]]).unwrap();
        let avg = MetricReport::average(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(avg.mae, (a.mae + b.mae) / 2.0);
        assert!(avg.to_table(&["ankle_r"]).contains("ankle_r"));
    }

    proptest! {
        #[test]
        fn dtw_symmetric_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 1..12),
            b in prop::collection::vec(-5.0f64..5.0, 1..12),
        ) {
            let ab = dtw(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, dtw(&b, &a).unwrap());
            prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
            if a.len() == b.len() {
                let identity: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
                prop_assert!(ab <= identity + 1e-12);
            }
        }
    }
}
