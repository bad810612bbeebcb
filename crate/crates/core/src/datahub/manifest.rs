//! Dataset manifests: a header line declaring the ordered class names and
//! feature dimension, then one JSON object per sample.
//!
//! ```text
//! {"kind":"header","format":"duet-manifest/1","classes":["c0","c1"],"dim":2}
//! {"id":"s00000","features":[0.1,2.3],"gold_label":0,"working_label":1,"annotations":[{"annotator_id":"a0","label":1}]}
//! ```
//!
//! Labels are written as class indices. On read a label may also be given
//! as a class name from the header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AnnotationSet, Dataset, LabelSpace, Sample, Vote};
use crate::error::{DuetError, Result};

pub const MANIFEST_FORMAT: &str = "duet-manifest/1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    format: String,
    classes: Vec<String>,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct VoteRow {
    annotator_id: String,
    label: LabelRef,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRow {
    id: String,
    features: Vec<f64>,
    gold_label: Option<LabelRef>,
    working_label: Option<LabelRef>,
    #[serde(default)]
    annotations: Vec<VoteRow>,
}

pub fn write_manifest_to<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header = Header {
        kind: "header".into(),
        format: MANIFEST_FORMAT.into(),
        classes: dataset.label_space.classes().to_vec(),
        dim: dataset.dim,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        let row = SampleRow {
            id: s.id.clone(),
            features: s.features.clone(),
            gold_label: s.gold_label.map(LabelRef::Index),
            working_label: s.working_label.map(LabelRef::Index),
            annotations: s
                .annotations
                .votes()
                .iter()
                .map(|v| VoteRow {
                    annotator_id: v.annotator_id.clone(),
                    label: LabelRef::Index(v.label),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    write_manifest_to(dataset, File::create(path)?)
}

fn resolve(label: &LabelRef, space: &LabelSpace, line: usize) -> Result<usize> {
    match label {
        LabelRef::Index(i) if space.contains(*i) => Ok(*i),
        LabelRef::Index(i) => Err(DuetError::Schema {
            line,
            message: format!("class index {i} outside label space of {}", space.k()),
        }),
        LabelRef::Name(name) => space.index_of(name).ok_or_else(|| DuetError::Schema {
            line,
            message: format!("unknown class identifier {name:?}"),
        }),
    }
}

pub fn read_manifest_from<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines().enumerate();
    let (label_space, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(DuetError::Parse {
                line: 1,
                message: "missing header record".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let header: Header = serde_json::from_str(&line).map_err(|e| DuetError::Parse {
            line: i + 1,
            message: format!("bad header: {e}"),
        })?;
        if header.kind != "header" || header.format != MANIFEST_FORMAT {
            return Err(DuetError::Schema {
                line: i + 1,
                message: format!("expected {MANIFEST_FORMAT} header"),
            });
        }
        let space = LabelSpace::new(header.classes).map_err(|e| DuetError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if header.dim == 0 {
            return Err(DuetError::Schema {
                line: i + 1,
                message: "feature dimension must be positive".into(),
            });
        }
        break (space, header.dim);
    };
    let mut samples = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: SampleRow = serde_json::from_str(&line).map_err(|e| DuetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let schema = |message: String| DuetError::Schema { line: line_no, message };
        if row.features.len() != dim {
            return Err(schema(format!(
                "{} features, header declares {dim}",
                row.features.len()
            )));
        }
        if !ids.insert(row.id.clone()) {
            return Err(schema(format!("duplicate sample id {}", row.id)));
        }
        let votes = row
            .annotations
            .iter()
            .map(|v| {
                Ok(Vote {
                    annotator_id: v.annotator_id.clone(),
                    label: resolve(&v.label, &label_space, line_no)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let annotations = AnnotationSet::new(votes).map_err(|e| schema(e.to_string()))?;
        samples.push(Sample {
            id: row.id,
            features: row.features,
            gold_label: row
                .gold_label
                .as_ref()
                .map(|l| resolve(l, &label_space, line_no))
                .transpose()?,
            working_label: row
                .working_label
                .as_ref()
                .map(|l| resolve(l, &label_space, line_no))
                .transpose()?,
            annotations,
        });
    }
    Dataset::new(label_space, dim, samples)
}

pub fn read_manifest(path: &Path) -> Result<Dataset> {
    read_manifest_from(BufReader::new(File::open(path)?))
}
