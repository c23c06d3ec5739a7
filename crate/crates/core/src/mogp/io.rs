use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{MoGPModel, OptimizerConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::kernels::{CompositeKernelSpec, CoregionalizationFactor, N_KERNEL_PARAMS};
use crate::kv::KvDocument;

pub const MOGP_SCHEMA: &str = "mogp-v1";

/// Renders a model as a `mogp-v1` document. The training set is embedded and
/// referenced by its SHA-256 digest, which is checked on load.
pub fn model_to_document(model: &MoGPModel) -> KvDocument {
    let mut doc = KvDocument::with_schema(MOGP_SCHEMA);
    doc.set("outputs", model.n_outputs().to_string());
    doc.set("rank", model.coreg.rank().to_string());
    let kernel = model.kernel.to_vec();
    for (name, v) in CompositeKernelSpec::PARAM_NAMES.iter().zip(kernel) {
        doc.set_f64(&format!("kernel.{name}"), v);
    }
    let coreg = model.coreg.to_vec();
    let wlen = model.n_outputs() * model.coreg.rank();
    doc.set_f64s("coreg.w", coreg[..wlen].iter().copied());
    doc.set_f64s("coreg.log_kappa", coreg[wlen..].iter().copied());
    doc.set_f64s("means", model.means.iter().copied());
    doc.set_f64("log_noise", model.log_noise);
    doc.set("training.sha256", model.training.digest());
    doc.set("training.n", model.training.len().to_string());
    doc.set_f64s("training.times", model.training.times.iter().copied());
    doc.set_usizes("training.outputs", model.training.outputs.iter().copied());
    doc.set_f64s("training.values", model.training.values.iter().copied());
    if let Some(cfg) = &model.config {
        doc.set("config.iterations", cfg.iterations.to_string());
        doc.set_f64("config.learning_rate", cfg.learning_rate);
        doc.set_f64("config.weight_decay", cfg.weight_decay);
        doc.set("config.seed", cfg.seed.to_string());
        doc.set("config.rank", cfg.rank.to_string());
        doc.set_f64("config.tolerance", cfg.tolerance);
        doc.set("config.patience", cfg.patience.to_string());
        doc.set_f64("config.initial_noise", cfg.initial_noise);
    }
    doc
}

fn parse_u64(doc: &KvDocument, key: &str) -> Result<u64> {
    let raw = doc.require(key)?;
    raw.parse().map_err(|_| Error::Parse {
        context: key.into(),
        message: format!("not an unsigned integer: {raw}"),
    })
}

pub fn model_from_document(doc: &KvDocument) -> Result<MoGPModel> {
    doc.require_schema(MOGP_SCHEMA)?;
    let outputs = doc.usize("outputs")?;
    let rank = doc.usize("rank")?;
    let mut kernel = [0.0; N_KERNEL_PARAMS];
    for (slot, name) in kernel.iter_mut().zip(CompositeKernelSpec::PARAM_NAMES) {
        *slot = doc.f64(&format!("kernel.{name}"))?;
    }
    let w = doc.f64s("coreg.w")?;
    let log_kappa = doc.f64s("coreg.log_kappa")?;
    let means = doc.f64s("means")?;
    if w.len() != outputs * rank || log_kappa.len() != outputs || means.len() != outputs {
        return Err(Error::Parse {
            context: MOGP_SCHEMA.into(),
            message: "parameter vector lengths disagree with outputs/rank".into(),
        });
    }
    let coreg = CoregionalizationFactor {
        w: DMatrix::from_row_slice(outputs, rank, &w),
        log_kappa: DVector::from_vec(log_kappa),
    };
    let training = TrainingSet::new(
        doc.f64s("training.times")?,
        doc.usizes("training.outputs")?,
        doc.f64s("training.values")?,
    )?;
    if training.len() != doc.usize("training.n")? {
        return Err(Error::Parse {
            context: "training.n".into(),
            message: "count does not match embedded data".into(),
        });
    }
    let digest = doc.require("training.sha256")?;
    if digest != training.digest() {
        return Err(Error::Parse {
            context: "training.sha256".into(),
            message: "digest does not match embedded training data".into(),
        });
    }
    let mut model = MoGPModel::from_log_noise(
        CompositeKernelSpec::from_slice(&kernel),
        coreg,
        DVector::from_vec(means),
        doc.f64("log_noise")?,
        training,
    )?;
    if doc.get("config.iterations").is_some() {
        model.config = Some(OptimizerConfig {
            iterations: doc.usize("config.iterations")?,
            learning_rate: doc.f64("config.learning_rate")?,
            weight_decay: doc.f64("config.weight_decay")?,
            seed: parse_u64(doc, "config.seed")?,
            rank: doc.usize("config.rank")?,
            outputs: Some(outputs),
            tolerance: doc.f64("config.tolerance")?,
            patience: doc.usize("config.patience")?,
            initial_noise: doc.f64("config.initial_noise")?,
        });
    }
    Ok(model)
}

pub fn save_model(model: &MoGPModel, path: &Path) -> Result<()> {
    model_to_document(model).write(path)
}

pub fn load_model(path: &Path) -> Result<MoGPModel> {
    model_from_document(&KvDocument::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mogp::{fit, OptimizerConfig};

    #[test]
    fn document_round_trip_is_bit_exact() {
        let ts = TrainingSet::new(
            vec![0.1, 0.35, 0.7, 0.2, 0.55, 0.9],
            vec![0, 0, 0, 1, 1, 1],
            vec![0.3, -0.2, 0.8, 1.0, 1.4, 0.6],
        )
        .unwrap();
        let cfg = OptimizerConfig {
            iterations: 25,
            seed: 11,
            ..Default::default()
        };
        let model = fit(&ts, &cfg).unwrap().model;
        let text = model_to_document(&model).render();
        let back = model_from_document(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(model_to_document(&back).render(), text);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.params()), bits(model.params()));
        assert_eq!(
            back.predict(&[0.42]).unwrap(),
            model.predict(&[0.42]).unwrap()
        );
    }

    #[test]
    fn tampered_training_data_is_rejected() {
        let ts = TrainingSet::new(vec![0.1, 0.6], vec![0, 0], vec![0.3, -0.2]).unwrap();
        let cfg = OptimizerConfig {
            iterations: 0,
            rank: 1,
            ..Default::default()
        };
        let model = fit(&ts, &cfg).unwrap().model;
        let mut doc = model_to_document(&model);
        doc.set("training.values", "0.3 -0.25");
        assert!(model_from_document(&doc).is_err());
    }
}
