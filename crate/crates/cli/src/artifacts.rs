//! Reading and writing the files that pass between stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use cog_core::corpus::Corpus;
use cog_core::ToyParams;

use crate::error::{CliError, CliResult};

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::data(path.display(), e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::data(path.display(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Internal(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::data(path.display(), e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Internal(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> CliResult<Corpus> {
    Corpus::load(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn load_params(path: &Path) -> CliResult<ToyParams> {
    let p: ToyParams = read_json(path)?;
    p.validate().map_err(|e| CliError::data(path.display(), e))?;
    Ok(p)
}

/// Non-empty lines of a prefix file, trimmed.
pub fn read_prefixes(path: &Path) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.trim().to_string());
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no prefixes", path.display())));
    }
    Ok(out)
}

/// `traces.jsonl` stays as is for one sample; sample `i` of several becomes
/// `traces.<i>.jsonl`.
pub fn sample_path(base: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "jsonl".into());
    base.with_file_name(format!("{stem}.{i:04}.{ext}"))
}
