use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Corpus, Judgment, JudgmentSet, Passage, Query, QuerySet, Records};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Passages,
    Queries,
    Qrels,
}

#[derive(Debug)]
pub enum Loaded {
    Corpus(Corpus),
    Queries(QuerySet),
    Judgments(JudgmentSet),
}

impl Loaded {
    pub fn len(&self) -> usize {
        match self {
            Loaded::Corpus(c) => c.len(),
            Loaded::Queries(q) => q.len(),
            Loaded::Judgments(j) => j.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load(path: &Path, kind: Kind) -> Result<Loaded> {
    Ok(match kind {
        Kind::Passages => Loaded::Corpus(load_passages(path)?),
        Kind::Queries => Loaded::Queries(load_queries(path)?),
        Kind::Qrels => Loaded::Judgments(load_qrels(path)?),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_passages(path: &Path) -> Result<Corpus> {
    let passages: Vec<Passage> = read_jsonl(path)?;
    if let Some((i, p)) = passages
        .iter()
        .enumerate()
        .find(|(_, p)| p.text.trim().is_empty())
    {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("passage `{}` has empty text", p.id),
        });
    }
    Records::new(passages)
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    Records::new(read_jsonl::<Query>(path)?)
}

/// Reads TREC qrels: `query_id iteration passage_id grade`, whitespace separated.
pub fn load_qrels(path: &Path) -> Result<JudgmentSet> {
    let mut set = JudgmentSet::default();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("grade `{}` is not an integer", fields[3])))?;
        if grade < 0 {
            return Err(bad(format!("negative grade {grade}")));
        }
        set.insert(Judgment {
            query_id: fields[0].to_string(),
            passage_id: fields[2].to_string(),
            grade: grade as u32,
        });
    }
    Ok(set)
}

pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_qrels(path: &Path, judgments: &JudgmentSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for j in judgments.iter() {
        writeln!(w, "{}\t0\t{}\t{}", j.query_id, j.passage_id, j.grade)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
