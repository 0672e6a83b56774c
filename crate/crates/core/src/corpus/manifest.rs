//! Corpus manifest: a CSV file with a header row, optionally preceded by
//! `#` comment lines. A comment of the form
//!
//! ```text
//! # dims speakers=4 emotions=neutral,anger,sadness sentences=4 repetitions=5 csd_shaped=false
//! ```
//!
//! declares the corpus dimensions; without it they are inferred from the
//! records. Columns, in order:
//! `file_path,speaker_id,gender,emotion,sentence_id,repetition,split`.
//! Paths are relative to the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Emotion, Gender, Label};

pub const MANIFEST_HEADER: &str = "file_path,speaker_id,gender,emotion,sentence_id,repetition,split";

/// Dimensions of the full-size recorded corpus: 25 speakers per gender, six
/// emotions, eight sentences, nine repetitions.
pub const CSD_DIMS: (u32, usize, u32, u32) = (25, 6, 8, 9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// The first half of the sentences train, the rest test.
    pub fn for_sentence(sentence_id: u32, n_sentences: u32) -> Split {
        if sentence_id <= n_sentences / 2 {
            Split::Train
        } else {
            Split::Test
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub file_path: PathBuf,
    pub speaker_id: u32,
    pub gender: Gender,
    pub emotion: Emotion,
    pub sentence_id: u32,
    pub repetition: u32,
    pub split: Split,
}

impl UtteranceRecord {
    pub fn label(&self) -> Label {
        Label::new(self.gender, self.emotion, self.speaker_id)
    }

    fn key(&self) -> (u32, Gender, Emotion, u32, u32) {
        (
            self.speaker_id,
            self.gender,
            self.emotion,
            self.sentence_id,
            self.repetition,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDims {
    pub n_speakers: u32,
    pub emotions: Vec<Emotion>,
    pub sentences: u32,
    pub repetitions: u32,
    pub csd_shaped: bool,
}

impl CorpusDims {
    pub fn n_records(&self) -> usize {
        2 * self.n_speakers as usize
            * self.emotions.len()
            * self.sentences as usize
            * self.repetitions as usize
    }

    fn to_comment(&self) -> String {
        let emotions: Vec<&str> = self.emotions.iter().map(|e| e.name()).collect();
        format!(
            "# dims speakers={} emotions={} sentences={} repetitions={} csd_shaped={}",
            self.n_speakers,
            emotions.join(","),
            self.sentences,
            self.repetitions,
            self.csd_shaped
        )
    }

    fn from_comment(line: &str) -> Result<Option<Self>> {
        let Some(rest) = line.trim_start_matches('#').trim().strip_prefix("dims ") else {
            return Ok(None);
        };
        let mut dims = CorpusDims {
            n_speakers: 0,
            emotions: Vec::new(),
            sentences: 0,
            repetitions: 0,
            csd_shaped: false,
        };
        let num = |v: &str| {
            v.parse::<u32>()
                .map_err(|_| Error::Parse(format!("bad number {v:?} in dims line")))
        };
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad dims field {field:?}")))?;
            match k {
                "speakers" => dims.n_speakers = num(v)?,
                "sentences" => dims.sentences = num(v)?,
                "repetitions" => dims.repetitions = num(v)?,
                "emotions" => {
                    dims.emotions = v.split(',').map(Emotion::from_str).collect::<Result<_>>()?
                }
                "csd_shaped" => {
                    dims.csd_shaped = v
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad flag {v:?} in dims line")))?
                }
                _ => return Err(Error::Parse(format!("unknown dims field {k:?}"))),
            }
        }
        dims.emotions.sort();
        Ok(Some(dims))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    dims: CorpusDims,
    records: Vec<UtteranceRecord>,
    root: PathBuf,
}

#[derive(Deserialize)]
struct Row {
    file_path: String,
    speaker_id: u32,
    gender: String,
    emotion: String,
    sentence_id: u32,
    repetition: u32,
    split: Option<String>,
}

fn violation(msg: String) -> Error {
    Error::InvariantViolation(msg)
}

impl CorpusManifest {
    /// Validates and wraps records. `root` is the directory record paths
    /// are relative to.
    pub fn new(dims: CorpusDims, records: Vec<UtteranceRecord>, root: PathBuf) -> Result<Self> {
        let m = Self {
            dims,
            records,
            root,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if self.records.is_empty() {
            return Err(Error::Parse("manifest has no records".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !(1..=d.n_speakers).contains(&r.speaker_id)
                || !(1..=d.sentences).contains(&r.sentence_id)
                || !(1..=d.repetitions).contains(&r.repetition)
                || !d.emotions.contains(&r.emotion)
            {
                return Err(violation(format!(
                    "{} is outside the corpus dimensions",
                    r.file_path.display()
                )));
            }
            let expected = Split::for_sentence(r.sentence_id, d.sentences);
            if r.split != expected {
                return Err(violation(format!(
                    "{} is marked {} but sentence {} belongs to {}",
                    r.file_path.display(),
                    r.split,
                    r.sentence_id,
                    expected
                )));
            }
            if !seen.insert(r.key()) {
                return Err(violation(format!(
                    "duplicate record for {}{:02}/{} sentence {} repetition {}",
                    r.gender, r.speaker_id, r.emotion, r.sentence_id, r.repetition
                )));
            }
        }
        if d.csd_shaped {
            let shape = (d.n_speakers, d.emotions.len(), d.sentences, d.repetitions);
            if shape != CSD_DIMS || self.records.len() != d.n_records() {
                return Err(violation(format!(
                    "manifest is flagged full-size but has dims {shape:?} and {} records",
                    self.records.len()
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &CorpusDims {
        &self.dims
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, record: &UtteranceRecord) -> PathBuf {
        self.root.join(&record.file_path)
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut dims = None;
        for line in text.lines().take_while(|l| l.trim_start().starts_with('#')) {
            if let Some(d) = CorpusDims::from_comment(line)? {
                dims = Some(d);
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        let expected: Vec<&str> = MANIFEST_HEADER.split(',').collect();
        let found: Vec<&str> = headers.iter().collect();
        let has_split = found == expected;
        if !has_split && found != expected[..expected.len() - 1] {
            return Err(Error::Parse(format!(
                "manifest header {found:?} does not match {MANIFEST_HEADER:?}"
            )));
        }
        let rows = reader
            .deserialize::<Row>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        if rows.is_empty() {
            return Err(Error::Parse("manifest has no records".into()));
        }

        let dims = match dims {
            Some(d) => d,
            None => {
                let emotions: BTreeSet<Emotion> = rows
                    .iter()
                    .map(|r| r.emotion.parse())
                    .collect::<Result<_>>()?;
                CorpusDims {
                    n_speakers: rows.iter().map(|r| r.speaker_id).max().unwrap_or(0),
                    emotions: emotions.into_iter().collect(),
                    sentences: rows.iter().map(|r| r.sentence_id).max().unwrap_or(0),
                    repetitions: rows.iter().map(|r| r.repetition).max().unwrap_or(0),
                    csd_shaped: false,
                }
            }
        };

        let records = rows
            .into_iter()
            .map(|r| {
                let computed = Split::for_sentence(r.sentence_id, dims.sentences);
                let split = match r.split.as_deref() {
                    None | Some("") => computed,
                    Some("train") => Split::Train,
                    Some("test") => Split::Test,
                    Some(other) => return Err(Error::Parse(format!("unknown split {other:?}"))),
                };
                Ok(UtteranceRecord {
                    file_path: PathBuf::from(r.file_path),
                    speaker_id: r.speaker_id,
                    gender: r.gender.parse()?,
                    emotion: r.emotion.parse()?,
                    sentence_id: r.sentence_id,
                    repetition: r.repetition,
                    split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, records, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# sphmm-sid corpus manifest\n");
        out.push_str(&self.dims.to_comment());
        out.push('\n');
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.file_path.display(),
                r.speaker_id,
                r.gender,
                r.emotion,
                r.sentence_id,
                r.repetition,
                r.split
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Reads and validates a manifest, including that every referenced file
/// exists.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let m = CorpusManifest::parse(&text, root)?;
    if let Some(r) = m.records.iter().find(|r| !m.resolve(r).is_file()) {
        return Err(violation(format!(
            "missing audio file {}",
            m.resolve(r).display()
        )));
    }
    Ok(m)
}
