use std::path::Path;

use super::{HmmModel, N_STATES};
use crate::error::{Error, Result};
use crate::kv::KvDocument;

pub const HMM_SCHEMA: &str = "hmm-v1";

pub fn hmm_to_document(model: &HmmModel) -> KvDocument {
    let mut doc = KvDocument::with_schema(HMM_SCHEMA);
    doc.set("states", N_STATES.to_string());
    doc.set_f64s("pi", model.initial_probs);
    doc.set_f64s("transitions", model.transitions.iter().flatten().copied());
    for (i, mu) in model.state_means.iter().enumerate() {
        doc.set_f64s(&format!("mean.{}", i + 1), *mu);
    }
    doc.set_f64s(
        "covariance",
        model.shared_covariance.iter().flatten().copied(),
    );
    doc
}

fn fixed<const N: usize>(doc: &KvDocument, key: &str) -> Result<[f64; N]> {
    let v = doc.f64s(key)?;
    v.try_into().map_err(|v: Vec<f64>| Error::Parse {
        context: key.into(),
        message: format!("expected {N} values, found {}", v.len()),
    })
}

pub fn hmm_from_document(doc: &KvDocument) -> Result<HmmModel> {
    doc.require_schema(HMM_SCHEMA)?;
    if doc.usize("states")? != N_STATES {
        return Err(Error::Parse {
            context: "states".into(),
            message: format!("only {N_STATES}-state models are supported"),
        });
    }
    let a: [f64; N_STATES * N_STATES] = fixed(doc, "transitions")?;
    let c: [f64; 4] = fixed(doc, "covariance")?;
    let mut state_means = [[0.0; 2]; N_STATES];
    for (i, mu) in state_means.iter_mut().enumerate() {
        *mu = fixed(doc, &format!("mean.{}", i + 1))?;
    }
    let model = HmmModel {
        initial_probs: fixed(doc, "pi")?,
        transitions: std::array::from_fn(|i| std::array::from_fn(|j| a[i * N_STATES + j])),
        state_means,
        shared_covariance: [[c[0], c[1]], [c[2], c[3]]],
    };
    model.validate()?;
    Ok(model)
}

pub fn save_hmm(model: &HmmModel, path: &Path) -> Result<()> {
    hmm_to_document(model).write(path)
}

pub fn load_hmm(path: &Path) -> Result<HmmModel> {
    hmm_from_document(&KvDocument::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::default_model;

    #[test]
    fn round_trip_bit_exact() {
        let mut m = default_model();
        m.state_means = [[0.1, -0.3], [1.0 / 3.0, 2.5], [1e-17, -7.25], [0.7, 0.2]];
        m.shared_covariance = [[0.41, 0.1 / 3.0], [0.1 / 3.0, 0.27]];
        let text = hmm_to_document(&m).render();
        let back = hmm_from_document(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(hmm_to_document(&back).render(), text);
    }

    #[test]
    fn invalid_documents_are_rejected() {
        let mut doc = hmm_to_document(&default_model());
        doc.set("pi", "0.5 0.5 0.5");
        assert!(hmm_from_document(&doc).is_err());
        let mut doc = hmm_to_document(&default_model());
        doc.set("pi", "0.5 0.5 0.5 0.5");
        assert!(hmm_from_document(&doc).is_err());
    }
}
