use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{Corpus, RefexInstance, Split, Template};
use crate::error::{Error, Result};

pub const TEMPLATES_FILE: &str = "templates.jsonl";

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a corpus directory (`train.jsonl`, `dev.jsonl`, `test.jsonl`,
/// `templates.jsonl`) and checks every invariant.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut corpus = Corpus::default();
    for template in read_jsonl::<Template>(&dir.join(TEMPLATES_FILE))? {
        let id = template.template_id.clone();
        if corpus.templates.insert(id.clone(), template).is_some() {
            return Err(Error::InvalidTemplate {
                template: id,
                message: "duplicate template id".into(),
            });
        }
    }
    for split in Split::ALL {
        *corpus.split_mut(split) = read_jsonl::<RefexInstance>(&dir.join(split.file_name()))?;
    }
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(TEMPLATES_FILE), corpus.templates.values())?;
    for split in Split::ALL {
        write_jsonl(&dir.join(split.file_name()), corpus.split(split))?;
    }
    Ok(())
}
