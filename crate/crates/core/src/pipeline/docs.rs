//! Key-value documents exchanged between subcommands.

use super::{PreparedSubject, SubjectPrediction};
use crate::dataio::Cohort;
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::mogp::PosteriorPrediction;
use crate::signal::{unit_grid, ChannelScaling, TrajectorySet, CHANNELS};

pub const PREPARED_SCHEMA: &str = "prepared-v1";
pub const PREDICTIONS_SCHEMA: &str = "predictions-v1";

fn fixed6(doc: &KvDocument, key: &str) -> Result<[f64; 6]> {
    doc.f64s(key)?
        .try_into()
        .map_err(|v: Vec<f64>| Error::Parse {
            context: key.into(),
            message: format!("expected 6 values, found {}", v.len()),
        })
}

fn sized(doc: &KvDocument, key: &str, n: usize) -> Result<Vec<f64>> {
    let v = doc.f64s(key)?;
    if v.len() != n {
        return Err(Error::Parse {
            context: key.into(),
            message: format!("expected {n} values, found {}", v.len()),
        });
    }
    Ok(v)
}

fn ids(doc: &KvDocument) -> Result<Vec<String>> {
    let ids: Vec<String> = doc
        .require("subjects")?
        .split_whitespace()
        .map(String::from)
        .collect();
    if ids.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    Ok(ids)
}

pub fn prepared_to_document(subjects: &[PreparedSubject]) -> KvDocument {
    let mut doc = KvDocument::with_schema(PREPARED_SCHEMA);
    doc.set(
        "subjects",
        subjects
            .iter()
            .map(|s| s.id.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    );
    doc.set(
        "grid_points",
        subjects.first().map_or(0, |s| s.grid().len()).to_string(),
    );
    doc.set("channels", CHANNELS.map(|c| c.label()).join(" "));
    for s in subjects {
        let p = format!("subject.{}", s.id);
        doc.set(&format!("{p}.cohort"), s.cohort.name());
        doc.set(&format!("{p}.cycles"), s.sets.len().to_string());
        doc.set_f64s(&format!("{p}.scaling.mean"), s.scaling.mean);
        doc.set_f64s(&format!("{p}.scaling.std"), s.scaling.std);
        for (k, set) in s.sets.iter().enumerate() {
            for (c, ch) in CHANNELS.iter().enumerate() {
                doc.set_f64s(
                    &format!("{p}.cycle.{k}.{ch}"),
                    set.channels[c].iter().copied(),
                );
            }
            doc.set_f64s(
                &format!("{p}.cycle.{k}.knee_angle_right"),
                s.knee_angles[0][k].iter().copied(),
            );
            doc.set_f64s(
                &format!("{p}.cycle.{k}.knee_angle_left"),
                s.knee_angles[1][k].iter().copied(),
            );
        }
    }
    doc
}

pub fn prepared_from_document(doc: &KvDocument) -> Result<Vec<PreparedSubject>> {
    doc.require_schema(PREPARED_SCHEMA)?;
    let points = doc.usize("grid_points")?;
    let grid = unit_grid(points);
    let mut out = Vec::new();
    for id in ids(doc)? {
        let p = format!("subject.{id}");
        let cohort_raw = doc.require(&format!("{p}.cohort"))?;
        let cohort = Cohort::parse(cohort_raw).ok_or_else(|| Error::Parse {
            context: format!("{p}.cohort"),
            message: format!("unknown cohort {cohort_raw}"),
        })?;
        let scaling = ChannelScaling {
            mean: fixed6(doc, &format!("{p}.scaling.mean"))?,
            std: fixed6(doc, &format!("{p}.scaling.std"))?,
        };
        let cycles = doc.usize(&format!("{p}.cycles"))?;
        if cycles == 0 {
            return Err(Error::invalid(format!("subject {id} has no cycles")));
        }
        let mut sets = Vec::with_capacity(cycles);
        let mut knee_angles: [Vec<Vec<f64>>; 2] = Default::default();
        for k in 0..cycles {
            let mut channels: [Vec<f64>; 6] = Default::default();
            for (slot, ch) in channels.iter_mut().zip(CHANNELS) {
                *slot = sized(doc, &format!("{p}.cycle.{k}.{ch}"), points)?;
            }
            let set = TrajectorySet {
                subject_id: id.clone(),
                cycle: k,
                grid: grid.clone(),
                channels,
            };
            set.validate()?;
            sets.push(set);
            knee_angles[0].push(sized(
                doc,
                &format!("{p}.cycle.{k}.knee_angle_right"),
                points,
            )?);
            knee_angles[1].push(sized(
                doc,
                &format!("{p}.cycle.{k}.knee_angle_left"),
                points,
            )?);
        }
        out.push(PreparedSubject {
            id,
            cohort,
            sets,
            scaling,
            knee_angles,
        });
    }
    Ok(out)
}

pub fn predictions_to_document(scope: &str, predictions: &[SubjectPrediction]) -> KvDocument {
    let mut doc = KvDocument::with_schema(PREDICTIONS_SCHEMA);
    doc.set("scope", scope);
    doc.set(
        "subjects",
        predictions
            .iter()
            .map(|p| p.subject.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    );
    doc.set("channels", CHANNELS.map(|c| c.label()).join(" "));
    for p in predictions {
        let k = format!("subject.{}", p.subject);
        doc.set(&format!("{k}.model"), p.model.as_str());
        doc.set_f64s(&format!("{k}.times"), p.posterior.times.iter().copied());
        doc.set(&format!("{k}.clamped"), p.posterior.clamped.to_string());
        for (c, ch) in CHANNELS.iter().enumerate() {
            doc.set_f64s(
                &format!("{k}.{ch}.mean"),
                p.posterior.mean[c].iter().copied(),
            );
            doc.set_f64s(&format!("{k}.{ch}.std"), p.posterior.std[c].iter().copied());
            doc.set_f64s(&format!("{k}.{ch}.raw_mean"), p.raw_mean[c].iter().copied());
            doc.set_f64s(&format!("{k}.{ch}.raw_std"), p.raw_std[c].iter().copied());
        }
    }
    doc
}

/// Returns the fit scope recorded in the document and its predictions.
pub fn predictions_from_document(doc: &KvDocument) -> Result<(String, Vec<SubjectPrediction>)> {
    doc.require_schema(PREDICTIONS_SCHEMA)?;
    let scope = doc.require("scope")?.to_string();
    let mut out = Vec::new();
    for id in ids(doc)? {
        let k = format!("subject.{id}");
        let times = doc.f64s(&format!("{k}.times"))?;
        let n = times.len();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut raw_mean = Vec::new();
        let mut raw_std = Vec::new();
        for ch in CHANNELS {
            mean.push(sized(doc, &format!("{k}.{ch}.mean"), n)?);
            std.push(sized(doc, &format!("{k}.{ch}.std"), n)?);
            raw_mean.push(sized(doc, &format!("{k}.{ch}.raw_mean"), n)?);
            raw_std.push(sized(doc, &format!("{k}.{ch}.raw_std"), n)?);
        }
        out.push(SubjectPrediction {
            subject: id.clone(),
            model: doc.require(&format!("{k}.model"))?.to_string(),
            posterior: PosteriorPrediction {
                times,
                mean,
                std,
                clamped: doc.usize(&format!("{k}.clamped"))?,
                warnings: Vec::new(),
            },
            raw_mean,
            raw_std,
        });
    }
    Ok((scope, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use crate::pipeline::{preprocess_corpus, PreprocessConfig};

    #[test]
    fn prepared_round_trip() {
        let cfg = SynthConfig {
            control_subjects: 1,
            disorder_subjects: 1,
            ..Default::default()
        };
        let subjects = preprocess_corpus(
            &generate_synthetic(&cfg).unwrap(),
            &PreprocessConfig::default(),
        )
        .unwrap();
        let text = prepared_to_document(&subjects).render();
        let back = prepared_from_document(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, subjects);
        assert_eq!(prepared_to_document(&back).render(), text);
    }
}
