//! Labelled sentence pairs and the TSV interchange format.
//!
//! Each line holds `premise<TAB>hypothesis<TAB>label`, where the two token
//! columns are space-separated integer ids or words, and the label is one of
//! `entailment`, `contradiction`, `neutral`. An optional first line
//! `premise<TAB>hypothesis<TAB>label` is treated as a header.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub premise: Vec<u32>,
    pub hypothesis: Vec<u32>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab_size: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            if split.is_empty() {
                return Err(Error::invalid(format!("{name} split is empty")));
            }
            for (i, ex) in split.iter().enumerate() {
                for seq in [&ex.premise, &ex.hypothesis] {
                    if seq.is_empty() {
                        return Err(Error::invalid(format!("{name}[{i}] has an empty sequence")));
                    }
                    if let Some(&t) = seq.iter().find(|&&t| t as usize >= self.vocab_size) {
                        return Err(Error::invalid(format!(
                            "{name}[{i}] token {t} outside vocabulary of {}",
                            self.vocab_size
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn write_tsv<W: Write>(examples: &[Example], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    w.write_record(["premise", "hypothesis", "label"])?;
    let join = |seq: &[u32]| seq.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    for ex in examples {
        w.write_record([
            join(&ex.premise),
            join(&ex.hypothesis),
            ex.label.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<tsv>", e))?;
    Ok(())
}

pub fn write_tsv_file(examples: &[Example], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tsv(examples, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

struct RawExample {
    premise: Vec<String>,
    hypothesis: Vec<String>,
    label: Label,
}

fn read_raw<R: Read>(input: R, origin: &Path) -> Result<Vec<RawExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .quoting(false)
        .from_reader(input);
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {}: {message}", line + 1),
        };
        if record.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 columns, found {}",
                record.len()
            )));
        }
        if line == 0 && &record[0] == "premise" && &record[2] == "label" {
            continue;
        }
        let split = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        out.push(RawExample {
            premise: split(&record[0]),
            hypothesis: split(&record[1]),
            label: record[2]
                .parse()
                .map_err(|e: Error| parse_err(e.to_string()))?,
        });
    }
    Ok(out)
}

/// Maps raw tokens to ids: integers are used as-is when every token in every
/// split is an integer; otherwise words get ids in first-seen order.
fn assign_ids(splits: Vec<Vec<RawExample>>) -> (Vec<Vec<Example>>, usize) {
    let numeric = splits
        .iter()
        .flatten()
        .flat_map(|r| r.premise.iter().chain(&r.hypothesis))
        .all(|t| t.parse::<u32>().is_ok());

    let mut words: HashMap<String, u32> = HashMap::new();
    let mut max_id = 0u32;
    let mut lookup = |t: &str| -> u32 {
        let id = if numeric {
            t.parse().unwrap()
        } else {
            let next = words.len() as u32;
            *words.entry(t.to_owned()).or_insert(next)
        };
        max_id = max_id.max(id);
        id
    };

    let converted = splits
        .into_iter()
        .map(|split| {
            split
                .into_iter()
                .map(|r| Example {
                    premise: r.premise.iter().map(|t| lookup(t)).collect(),
                    hypothesis: r.hypothesis.iter().map(|t| lookup(t)).collect(),
                    label: r.label,
                })
                .collect()
        })
        .collect();
    (converted, max_id as usize + 1)
}

pub fn load_tsv_splits(train: &Path, val: &Path, test: &Path) -> Result<Dataset> {
    let mut raw = Vec::with_capacity(3);
    for path in [train, val, test] {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        raw.push(read_raw(std::io::BufReader::new(file), path)?);
    }
    let (mut splits, vocab_size) = assign_ids(raw);
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let ds = Dataset {
        train,
        val,
        test,
        vocab_size,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parses a single TSV document; returns the examples and the vocabulary size.
pub fn parse_tsv_str(text: &str) -> Result<(Vec<Example>, usize)> {
    let raw = read_raw(text.as_bytes(), Path::new("<string>"))?;
    let (mut splits, vocab) = assign_ids(vec![raw]);
    Ok((splits.pop().unwrap(), vocab))
}
