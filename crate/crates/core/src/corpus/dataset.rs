use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{detokenize, DialogueExample, StopWordSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    ParlaiText,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "parlai-text" | "parlai" => Ok(DatasetFormat::ParlaiText),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// One training example per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub personas: Vec<String>,
    pub history: Vec<String>,
    pub response: String,
}

impl From<&DialogueExample> for JsonlRecord {
    fn from(ex: &DialogueExample) -> Self {
        JsonlRecord {
            personas: ex.personas.iter().map(|p| p.text.clone()).collect(),
            history: ex.turns.iter().map(|t| detokenize(t)).collect(),
            response: detokenize(&ex.response),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<DialogueExample>> {
    let text = fs::read_to_string(path)?;
    let stop = StopWordSet::default();
    match format {
        DatasetFormat::Jsonl => parse_jsonl(&text, path, &stop),
        DatasetFormat::ParlaiText => parse_parlai(&text, path, &stop),
    }
}

pub fn parse_jsonl(text: &str, path: &Path, stop: &StopWordSet) -> Result<Vec<DialogueExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(DialogueExample::new(&rec.personas, &rec.history, &rec.response, stop));
    }
    Ok(out)
}

/// ParlAI dialogue text: numbered lines, `k your persona: ...` for the
/// agent's traits and `k <partner>\t<agent>[\t...]` for turns. The line
/// counter restarts for every dialogue. Each turn yields one example
/// whose history is every earlier utterance plus the partner's line.
pub fn parse_parlai(text: &str, path: &Path, stop: &StopWordSet) -> Result<Vec<DialogueExample>> {
    let malformed = |line: usize, reason: &str| Error::MalformedRecord {
        path: PathBuf::from(path),
        line,
        reason: reason.to_string(),
    };
    let mut out = Vec::new();
    let mut personas: Vec<String> = Vec::new();
    let mut history: Vec<String> = Vec::new();
    let mut last_index = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (index, rest) = raw
            .split_once(' ')
            .ok_or_else(|| malformed(lineno, "expected `<index> <content>`"))?;
        let index: usize = index
            .parse()
            .map_err(|_| malformed(lineno, "line does not start with a turn index"))?;
        if index < last_index || (index == 1 && !history.is_empty()) {
            personas.clear();
            history.clear();
        }
        last_index = index;
        if let Some(trait_text) = rest.strip_prefix("your persona:") {
            personas.push(trait_text.trim().to_string());
            continue;
        }
        if rest.starts_with("partner's persona:") {
            continue;
        }
        let mut fields = rest.split('\t');
        let partner = fields.next().unwrap_or_default();
        let agent = fields
            .next()
            .ok_or_else(|| malformed(lineno, "turn line has no tab-separated response"))?;
        history.push(partner.to_string());
        out.push(DialogueExample::new(&personas, &history, agent, stop));
        history.push(agent.to_string());
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[DialogueExample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, &JsonlRecord::from(ex))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
