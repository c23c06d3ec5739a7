//! Corpus ingestion from long-form CSV, leave-one-subject-out splits and the
//! synthetic gait generator.

mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

pub use synth::{generate_synthetic, template_ankle, AnomalySpec, SynthConfig, JOINT_AMPLITUDE};

use crate::error::{Error, Result};
use crate::kv::fmt_f64;
use crate::signal::{impute_missing, Channel, JointTrajectory3D, CHANNELS};

pub const CSV_HEADER: [&str; 9] = [
    "subject_id",
    "cohort",
    "cycle",
    "frame",
    "joint",
    "side",
    "x",
    "y",
    "z",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Control,
    Disorder,
}

impl Cohort {
    pub fn name(self) -> &'static str {
        match self {
            Cohort::Control => "control",
            Cohort::Disorder => "disorder",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "control" => Some(Cohort::Control),
            "disorder" => Some(Cohort::Disorder),
            _ => None,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One recorded gait cycle: six joint trajectories sharing a frame range.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCycle {
    pub cycle: usize,
    pub first_frame: i64,
    /// Indexed as [`CHANNELS`].
    pub trajectories: Vec<JointTrajectory3D>,
}

impl RawCycle {
    pub fn len(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y_channels(&self) -> [Vec<f64>; 6] {
        std::array::from_fn(|c| self.trajectories[c].y())
    }

    pub fn trajectory(&self, channel: Channel) -> &JointTrajectory3D {
        &self.trajectories[channel.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub cohort: Cohort,
    pub cycles: Vec<RawCycle>,
    /// Free-form origin notes (source file, generator settings).
    pub provenance: BTreeMap<String, String>,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(Error::invalid(format!(
                "subject id {:?} must be non-empty without spaces or commas",
                self.id
            )));
        }
        if self.cycles.is_empty() {
            return Err(Error::invalid(format!("subject {} has no cycles", self.id)));
        }
        for c in &self.cycles {
            if c.trajectories.len() != CHANNELS.len() {
                return Err(Error::invalid(format!(
                    "subject {} cycle {} lacks joints",
                    self.id, c.cycle
                )));
            }
            for (t, ch) in c.trajectories.iter().zip(CHANNELS) {
                if t.channel() != ch {
                    return Err(Error::invalid(format!(
                        "subject {} cycle {}: channel order",
                        self.id, c.cycle
                    )));
                }
                if t.len() != c.len() {
                    return Err(Error::invalid(format!(
                        "subject {} cycle {}: {} has {} frames, expected {}",
                        self.id,
                        c.cycle,
                        ch,
                        t.len(),
                        c.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn validate_corpus(corpus: &[SubjectRecord]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in corpus {
        s.validate()?;
        if !seen.insert(&s.id) {
            return Err(Error::invalid(format!("duplicate subject id {}", s.id)));
        }
    }
    Ok(())
}

fn schema(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.into(),
        message: message.into(),
    }
}

fn parse_coordinate(field: &str, row: usize, column: &str) -> Result<f64> {
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| schema(row, column, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(schema(
            row,
            column,
            "non-finite value; mark gaps with an empty field",
        ));
    }
    Ok(v)
}

type CycleKey = (String, usize);

struct CycleRows {
    cohort: Cohort,
    row: usize,
    frames: [BTreeMap<i64, [f64; 3]>; 6],
}

/// Parses the CSV text without gap filling; gaps stay as NaN.
pub fn parse_corpus_raw(text: &str) -> Result<Vec<SubjectRecord>> {
    if text.trim().is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| schema(1, "header", e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(schema(
            1,
            "header",
            format!("expected {}", CSV_HEADER.join(",")),
        ));
    }
    let mut cycles: BTreeMap<CycleKey, CycleRows> = BTreeMap::new();
    let mut cohorts: BTreeMap<String, Cohort> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            schema(row, "record", e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let subject = field(0).to_string();
        if subject.is_empty() {
            return Err(schema(row, "subject_id", "empty"));
        }
        let cohort = Cohort::parse(field(1))
            .ok_or_else(|| schema(row, "cohort", format!("unknown cohort {:?}", field(1))))?;
        if *cohorts.entry(subject.clone()).or_insert(cohort) != cohort {
            return Err(schema(
                row,
                "cohort",
                format!("subject {subject} changes cohort"),
            ));
        }
        let cycle: usize = field(2).parse().map_err(|_| {
            schema(
                row,
                "cycle",
                format!("not a non-negative integer: {:?}", field(2)),
            )
        })?;
        let frame: i64 = field(3)
            .parse()
            .map_err(|_| schema(row, "frame", format!("not an integer: {:?}", field(3))))?;
        let joint = crate::signal::Joint::parse(field(4))
            .ok_or_else(|| schema(row, "joint", format!("unknown joint {:?}", field(4))))?;
        let side = crate::signal::Side::parse(field(5))
            .ok_or_else(|| schema(row, "side", format!("unknown side {:?}", field(5))))?;
        let xyz = [
            parse_coordinate(field(6), row, "x")?,
            parse_coordinate(field(7), row, "y")?,
            parse_coordinate(field(8), row, "z")?,
        ];
        let entry = cycles.entry((subject, cycle)).or_insert_with(|| CycleRows {
            cohort,
            row,
            frames: Default::default(),
        });
        let channel = Channel { joint, side }.index();
        if entry.frames[channel].insert(frame, xyz).is_some() {
            return Err(schema(
                row,
                "frame",
                format!("duplicate frame {frame} for {joint:?} {side:?}"),
            ));
        }
    }
    if cycles.is_empty() {
        return Err(Error::invalid("no subjects"));
    }

    let mut subjects: Vec<SubjectRecord> = Vec::new();
    for ((subject, cycle), rows) in cycles {
        let frames: Vec<i64> = rows.frames[0].keys().copied().collect();
        for (c, ch) in rows.frames.iter().enumerate() {
            if !ch.keys().copied().eq(frames.iter().copied()) {
                return Err(schema(
                    rows.row,
                    "frame",
                    format!(
                        "subject {subject} cycle {cycle}: {} frames differ from {}",
                        CHANNELS[c], CHANNELS[0]
                    ),
                ));
            }
        }
        if frames.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(schema(
                rows.row,
                "frame",
                format!("subject {subject} cycle {cycle}: frames are not consecutive"),
            ));
        }
        let raw = RawCycle {
            cycle,
            first_frame: frames[0],
            trajectories: CHANNELS
                .iter()
                .zip(rows.frames)
                .map(|(ch, f)| JointTrajectory3D::new(ch.joint, ch.side, f.into_values().collect()))
                .collect(),
        };
        match subjects.last_mut() {
            Some(s) if s.id == subject => s.cycles.push(raw),
            _ => subjects.push(SubjectRecord {
                id: subject,
                cohort: rows.cohort,
                cycles: vec![raw],
                provenance: BTreeMap::new(),
            }),
        }
    }
    validate_corpus(&subjects)?;
    Ok(subjects)
}

/// Fills gaps in every trajectory.
pub fn impute_corpus(corpus: &mut [SubjectRecord]) -> Result<()> {
    for s in corpus.iter_mut() {
        for c in s.cycles.iter_mut() {
            for t in c.trajectories.iter_mut() {
                *t = impute_missing(t).map_err(|e| match e {
                    Error::InvalidInput(msg) => {
                        Error::invalid(format!("subject {} cycle {}: {msg}", s.id, c.cycle))
                    }
                    other => other,
                })?;
            }
        }
    }
    Ok(())
}

/// Parses and validates a corpus, filling marked gaps.
pub fn parse_corpus(text: &str) -> Result<Vec<SubjectRecord>> {
    let mut corpus = parse_corpus_raw(text)?;
    impute_corpus(&mut corpus)?;
    for s in &corpus {
        for c in &s.cycles {
            for t in &c.trajectories {
                t.validate()?;
            }
        }
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Vec<SubjectRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = parse_corpus(&text)?;
    for s in corpus.iter_mut() {
        s.provenance
            .insert("source".into(), path.display().to_string());
    }
    Ok(corpus)
}

fn coordinate_field(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        String::new()
    }
}

/// Canonical CSV text: rows sorted by subject id, cycle, frame, then channel
/// order; floats in shortest round-trip form; gaps as empty fields.
pub fn render_corpus(corpus: &[SubjectRecord]) -> Result<String> {
    validate_corpus(corpus)?;
    let mut order: Vec<&SubjectRecord> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for s in order {
        let mut cycles: Vec<&RawCycle> = s.cycles.iter().collect();
        cycles.sort_by_key(|c| c.cycle);
        for c in cycles {
            for i in 0..c.len() {
                for t in &c.trajectories {
                    let p = t.samples[i];
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        s.id,
                        s.cohort,
                        c.cycle,
                        c.first_frame + i as i64,
                        t.joint.name(),
                        t.side.name(),
                        coordinate_field(p[0]),
                        coordinate_field(p[1]),
                        coordinate_field(p[2]),
                    ));
                }
            }
        }
    }
    Ok(out)
}

pub fn save_corpus(corpus: &[SubjectRecord], path: &Path) -> Result<()> {
    crate::kv::write_atomic(path, render_corpus(corpus)?.as_bytes())
}

/// One leave-one-subject-out fold.
#[derive(Clone, Debug)]
pub struct LosoSplit<'a> {
    pub train: Vec<&'a SubjectRecord>,
    pub test: &'a SubjectRecord,
}

/// One split per subject in subject-id order; the held-out subject is
/// excluded from its training set.
pub fn loso_splits(corpus: &[SubjectRecord]) -> Result<Vec<LosoSplit<'_>>> {
    if corpus.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            corpus.len()
        )));
    }
    let mut order: Vec<&SubjectRecord> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(order
        .iter()
        .enumerate()
        .map(|(i, test)| LosoSplit {
            train: order
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| *s)
                .collect(),
            test,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> String {
        let mut s = CSV_HEADER.join(",") + "\n";
        for (id, cohort) in [("a", "control"), ("b", "disorder")] {
            for frame in 0..4 {
                for ch in CHANNELS {
                    let v = frame as f64 * 0.5 + ch.index() as f64;
                    s += &format!(
                        "{id},{cohort},0,{frame},{},{},{},{},0.25\n",
                        ch.joint.name(),
                        ch.side.name(),
                        fmt_f64(v),
                        fmt_f64(v + 0.1)
                    );
                }
            }
        }
        s
    }

    #[test]
    fn golden_fixture_round_trips() {
        let text = fixture();
        let corpus = parse_corpus(&text).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[1].cohort, Cohort::Disorder);
        let knee_l = &corpus[0].cycles[0].trajectories[3];
        assert_eq!(knee_l.samples[2], [4.0, 4.1, 0.25]);
        assert_eq!(render_corpus(&corpus).unwrap(), text);
    }

    #[test]
    fn empty_file_has_no_subjects() {
        let err = parse_corpus(&(CSV_HEADER.join(",") + "\n")).unwrap_err();
        assert!(err.to_string().contains("no subjects"));
        assert!(parse_corpus("")
            .unwrap_err()
            .to_string()
            .contains("no subjects"));
    }

    #[test]
    fn gaps_are_imputed_on_load() {
        let text = fixture().replacen(
            "a,control,0,1,hip,right,0.5,0.6,0.25",
            "a,control,0,1,hip,right,0.5,,0.25",
            1,
        );
        let raw = parse_corpus_raw(&text).unwrap();
        assert!(raw[0].cycles[0].trajectories[0].samples[1][1].is_nan());
        let corpus = parse_corpus(&text).unwrap();
        assert!((corpus[0].cycles[0].trajectories[0].samples[1][1] - 0.6).abs() < 1e-12);
        assert!(render_corpus(&raw).unwrap().contains("0.5,,0.25"));
    }

    #[test]
    fn schema_errors_carry_row_and_column() {
        let text = fixture().replacen("a,control,0,2,knee,left", "a,control,0,2,elbow,left", 1);
        match parse_corpus(&text) {
            Err(Error::Schema { row, column, .. }) => {
                assert_eq!(column, "joint");
                assert_eq!(row, 2 + 2 * 6 + 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = fixture().replacen("0.1,0.25", "NaN,0.25", 1);
        assert!(matches!(parse_corpus(&text), Err(Error::Schema { .. })));
        let text = fixture().replacen("b,disorder,0,0,hip", "b,control,0,0,hip", 1);
        assert!(parse_corpus(&text).is_err());
    }

    #[test]
    fn loso_partitions() {
        let corpus = parse_corpus(&fixture()).unwrap();
        let mut three = corpus.clone();
        let mut c = corpus[0].clone();
        c.id = "c".into();
        three.push(c);
        let splits = loso_splits(&three).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            assert_eq!(s.train.len(), 2);
            assert!(s.train.iter().all(|t| t.id != s.test.id));
        }
        let ids: Vec<&str> = splits.iter().map(|s| s.test.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(loso_splits(&corpus[..1]).is_err());
    }
}
