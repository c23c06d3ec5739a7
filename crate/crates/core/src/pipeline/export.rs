//! Plot-ready tables: predictive bands, observations and the
//! coregionalisation matrix.

use crate::error::Result;
use crate::kv::fmt_f64;
use crate::mogp::{MoGPModel, PosteriorPrediction};

/// CSV with `time` then `mean`, `lower`, `upper` per output, where the band
/// is the mean ± 2 predictive standard deviations.
pub fn band_table(prediction: &PosteriorPrediction, labels: &[String]) -> String {
    let mut out = String::from("time");
    for l in labels {
        out.push_str(&format!(",{l}_mean,{l}_lower,{l}_upper"));
    }
    out.push('\n');
    for (i, t) in prediction.times.iter().enumerate() {
        out.push_str(&fmt_f64(*t));
        for m in 0..labels.len() {
            let mean = prediction.mean[m][i];
            let half = 2.0 * prediction.std[m][i];
            out.push_str(&format!(
                ",{},{},{}",
                fmt_f64(mean),
                fmt_f64(mean - half),
                fmt_f64(mean + half)
            ));
        }
        out.push('\n');
    }
    out
}

/// CSV of the training observations: `output,label,time,value`.
pub fn observation_table(model: &MoGPModel, labels: &[String]) -> String {
    let mut out = String::from("output,label,time,value\n");
    let t = &model.training;
    for i in 0..t.len() {
        let o = t.outputs[i];
        let label = labels.get(o).map_or("?", |s| s.as_str());
        out.push_str(&format!(
            "{o},{label},{},{}\n",
            fmt_f64(t.times[i]),
            fmt_f64(t.values[i])
        ));
    }
    out
}

/// Two CSV matrices with a label header row and column: the
/// coregionalisation covariance `B` and its correlation form.
pub fn coregionalization_table(model: &MoGPModel, labels: &[String]) -> Result<(String, String)> {
    let export = model.export_coregionalization()?;
    let render = |m: &nalgebra::DMatrix<f64>| {
        let mut out = String::from("output");
        for l in labels {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for i in 0..m.nrows() {
            out.push_str(&labels[i]);
            for j in 0..m.ncols() {
                out.push_str(&format!(",{}", fmt_f64(m[(i, j)])));
            }
            out.push('\n');
        }
        out
    };
    Ok((render(&export.covariance), render(&export.correlation)))
}
