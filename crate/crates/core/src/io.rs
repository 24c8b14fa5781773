//! Line-delimited JSON datasets: one `{"tokens":[...],"labels":[...]}`
//! object per line. `labels` is optional and holds 0/1 entries.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EventId, EventSequence, LabeledSequence, Vocabulary};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<f64>>,
}

/// One dataset line after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub sequence: EventSequence,
    pub labels: Option<Vec<bool>>,
}

pub fn parse_record(line: &str, vocab: &Vocabulary) -> Result<DatasetRecord> {
    let r: Record = serde_json::from_str(line)?;
    let mut sequence = EventSequence::new(r.tokens, vocab)?;
    if let Some(ts) = r.timestamps {
        sequence = sequence.with_timestamps(ts)?;
    }
    let labels = r
        .labels
        .map(|l| {
            l.into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::Shape(format!("label entry {b} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()
        })
        .transpose()?;
    Ok(DatasetRecord { sequence, labels })
}

/// Reads every nonblank line; errors name the 1-based line number.
pub fn read_dataset(reader: impl BufRead, vocab: &Vocabulary) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, vocab).map_err(|e| Error::AtLine { line: i + 1, source: Box::new(e) })?);
    }
    Ok(out)
}

/// Records that all carry labels of one common length.
pub fn require_labels(records: &[DatasetRecord]) -> Result<Vec<LabeledSequence>> {
    let n = records.first().and_then(|r| r.labels.as_ref()).map_or(0, Vec::len);
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let l = r.labels.clone().ok_or_else(|| Error::Shape(format!("record {i} has no labels")))?;
            LabeledSequence::new(r.sequence.clone(), l, n)
        })
        .collect()
}

pub fn record_line(seq: &EventSequence, labels: Option<&[bool]>) -> String {
    let r = Record {
        tokens: seq.tokens().to_vec(),
        labels: labels.map(|l| l.iter().map(|&b| b as u8).collect()),
        timestamps: seq.timestamps().map(<[f64]>::to_vec),
    };
    serde_json::to_string(&r).expect("records always serialize")
}

pub fn write_sequences(mut w: impl Write, seqs: &[EventSequence]) -> Result<()> {
    for s in seqs {
        writeln!(w, "{}", record_line(s, None))?;
    }
    Ok(())
}

pub fn write_labeled(mut w: impl Write, seqs: &[LabeledSequence]) -> Result<()> {
    for s in seqs {
        writeln!(w, "{}", record_line(&s.sequence, Some(&s.labels)))?;
    }
    Ok(())
}
