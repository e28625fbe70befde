use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, Provenance, RawRecord, SplitTag};
use crate::error::{Error, Result};

/// Reads a JSON Lines dataset. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Dataset::new(records, SplitTag::Full, Provenance::File(path.to_path_buf()))
}

/// Writes one JSON object per record, in dataset order.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in dataset.records() {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
