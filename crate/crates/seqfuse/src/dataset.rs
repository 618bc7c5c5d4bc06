//! JSONL dataset loading.
//!
//! Two record shapes are accepted. `defect` records carry `func`, `target`
//! (0 or 1) and `idx`. `generic` records carry `code`, `label` (string or
//! integer) and optionally `id`, which defaults to the record's position
//! among the non-blank lines.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use seqfuse_core::data::{normalize_whitespace, LabeledSample};

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Defect,
    Generic,
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "defect" => Ok(Schema::Defect),
            "generic" => Ok(Schema::Generic),
            _ => Err(format!("unknown schema {s:?} (expected defect or generic)")),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Defect => "defect",
            Schema::Generic => "generic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedDataset {
    pub samples: Vec<LabeledSample>,
    /// Class names by index.
    pub labels: Vec<String>,
    /// Non-blank lines that failed to parse.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum RawLabel {
    Int(u64),
    Text(String),
}

impl RawLabel {
    fn name(&self) -> String {
        match self {
            RawLabel::Int(n) => n.to_string(),
            RawLabel::Text(s) => s.clone(),
        }
    }
}

struct Record {
    code: String,
    label: RawLabel,
    id: u64,
}

fn parse_record(line: &str, schema: Schema, position: u64) -> Option<Record> {
    let v: Value = serde_json::from_str(line).ok()?;
    let obj = v.as_object()?;
    let record = match schema {
        Schema::Defect => {
            let target = obj.get("target")?.as_u64().filter(|&t| t <= 1)?;
            Record {
                code: obj.get("func")?.as_str()?.to_string(),
                label: RawLabel::Int(target),
                id: obj.get("idx")?.as_u64()?,
            }
        }
        Schema::Generic => {
            let label = match obj.get("label")? {
                Value::String(s) if !s.is_empty() => RawLabel::Text(s.clone()),
                Value::Number(n) => RawLabel::Int(n.as_u64()?),
                _ => return None,
            };
            let id = match obj.get("id") {
                None => position,
                Some(v) => v.as_u64()?,
            };
            Record {
                code: obj.get("code")?.as_str()?.to_string(),
                label,
                id,
            }
        }
    };
    (!normalize_whitespace(&record.code).is_empty()).then_some(record)
}

/// Parses JSONL text. Malformed lines are skipped and counted; a text with
/// no usable record is an error.
pub fn parse_jsonl(text: &str, schema: Schema, origin: &Path) -> Result<LoadedDataset> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for (position, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        match parse_record(line, schema, position as u64) {
            Some(r) => records.push(r),
            None => skipped += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::format(
            origin,
            format!("no parseable {schema} records"),
        ));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed line(s)", origin.display());
    }
    let classes: Vec<RawLabel> = match schema {
        Schema::Defect => vec![RawLabel::Int(0), RawLabel::Int(1)],
        Schema::Generic => {
            let set: BTreeSet<RawLabel> = records.iter().map(|r| r.label.clone()).collect();
            if set.iter().all(|l| matches!(l, RawLabel::Int(_))) {
                set.into_iter().collect()
            } else {
                let names: BTreeSet<String> = set.iter().map(RawLabel::name).collect();
                names.into_iter().map(RawLabel::Text).collect()
            }
        }
    };
    let labels: Vec<String> = classes.iter().map(RawLabel::name).collect();
    let samples = records
        .into_iter()
        .map(|r| {
            let name = r.label.name();
            let label = labels
                .iter()
                .position(|l| *l == name)
                .expect("label collected above");
            LabeledSample::new(r.code, label, r.id)
        })
        .collect();
    Ok(LoadedDataset {
        samples,
        labels,
        skipped,
    })
}

pub fn load_jsonl(path: &Path, schema: Schema) -> Result<LoadedDataset> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    parse_jsonl(&text, schema, path)
}

/// One generic-schema line per sample, with integer labels.
pub fn to_generic_jsonl(samples: &[LabeledSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let line = serde_json::json!({ "code": s.code, "label": s.label, "id": s.id });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, schema: Schema) -> Result<LoadedDataset> {
        parse_jsonl(text, schema, Path::new("mem"))
    }

    #[test]
    fn defect_record() {
        let d = parse(
            r#"{"func":"int main(){}","target":0,"idx":7}"#,
            Schema::Defect,
        )
        .unwrap();
        assert_eq!(d.samples, vec![LabeledSample::new("int main(){}", 0, 7)]);
        assert_eq!(d.labels, vec!["0", "1"]);
        assert_eq!(d.skipped, 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse("", Schema::Defect).is_err());
        assert!(parse("\n  \n", Schema::Generic).is_err());
    }

    #[test]
    fn bad_lines_are_counted() {
        let text = "{\"func\":\"a\",\"target\":1,\"idx\":1}\n{\"func\":\"b\",\"target\":2,\"idx\":2}\n{\"func\":\"c\",\"target\":0,\"idx\":3}\n";
        let d = parse(text, Schema::Defect).unwrap();
        assert_eq!(d.samples.len(), 2);
        assert_eq!(d.skipped, 1);
        let d = parse(
            "not json\n{\"code\":\"x\",\"label\":\"a\"}\n{\"code\":\"   \",\"label\":\"a\"}",
            Schema::Generic,
        )
        .unwrap();
        assert_eq!((d.samples.len(), d.skipped), (1, 2));
    }

    #[test]
    fn generic_labels_map_in_sorted_order() {
        let text = r#"{"code":"x","label":"sort"}
{"code":"y","label":"graph"}
{"code":"z","label":"sort"}"#;
        let d = parse(text, Schema::Generic).unwrap();
        assert_eq!(d.labels, vec!["graph", "sort"]);
        assert_eq!(
            d.samples
                .iter()
                .map(|s| (s.label, s.id))
                .collect::<Vec<_>>(),
            vec![(1, 0), (0, 1), (1, 2)]
        );

        let ints = parse(
            "{\"code\":\"x\",\"label\":10}\n{\"code\":\"y\",\"label\":9}",
            Schema::Generic,
        )
        .unwrap();
        assert_eq!(ints.labels, vec!["9", "10"]);
    }

    #[test]
    fn schemas_agree_on_equivalent_records() {
        let defect = parse(
            "{\"func\":\"f(a)\",\"target\":1,\"idx\":4}\n{\"func\":\"g(b)\",\"target\":0,\"idx\":9}",
            Schema::Defect,
        )
        .unwrap();
        let generic = parse(
            "{\"code\":\"f(a)\",\"label\":1,\"id\":4}\n{\"code\":\"g(b)\",\"label\":0,\"id\":9}",
            Schema::Generic,
        )
        .unwrap();
        assert_eq!(defect, generic);
    }

    #[test]
    fn generic_writer_reloads() {
        let samples = vec![
            LabeledSample::new("a \"q\"\n b", 1, 3),
            LabeledSample::new("c", 0, 4),
        ];
        let d = parse(&to_generic_jsonl(&samples), Schema::Generic).unwrap();
        assert_eq!(d.samples, samples);
    }
}
