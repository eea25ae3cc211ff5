use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::record::CommitFileRecord;
use super::StoreError;

/// Writes records as one compact JSON object per line.
///
/// The file is written next to `out` and renamed into place, so a failed
/// write never leaves a truncated store behind.
pub fn write_store<I>(records: I, out: &Path) -> Result<usize, StoreError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<CommitFileRecord>,
{
    let tmp = tmp_path(out);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let count = write_records(records, &mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok::<_, StoreError>(count)
    })();
    match result {
        Ok(count) => {
            fs::rename(&tmp, out)?;
            Ok(count)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_records<I, W>(records: I, w: &mut W) -> Result<usize, StoreError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<CommitFileRecord>,
    W: Write,
{
    let mut count = 0;
    for rec in records {
        serde_json::to_writer(&mut *w, std::borrow::Borrow::borrow(&rec))
            .map_err(|e| StoreError::Io(e.into()))?;
        w.write_all(b"\n")?;
        count += 1;
    }
    Ok(count)
}

pub fn read_store(path: &Path) -> Result<Vec<CommitFileRecord>, StoreError> {
    StoreReader::new(BufReader::new(File::open(path)?)).collect()
}

/// Streaming reader over a store file. Each item is validated against the
/// record invariants.
pub struct StoreReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> StoreReader<R> {
    pub fn new(inner: R) -> Self {
        StoreReader {
            inner,
            line_no: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for StoreReader<R> {
    type Item = Result<CommitFileRecord, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.inner.read_line(&mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line_no += 1;
                Some(parse_line(self.buf.trim_end_matches(['\n', '\r']), self.line_no))
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<CommitFileRecord, StoreError> {
    let malformed = |field: &str, reason: String| StoreError::MalformedRecord {
        line: line_no,
        field: field.to_string(),
        reason,
    };
    let rec: CommitFileRecord = serde_json::from_str(line).map_err(|e| {
        let msg = e.to_string();
        let field = field_named_in(&msg).unwrap_or("<record>").to_string();
        malformed(&field, msg)
    })?;
    rec.validate()
        .map_err(|v| malformed(v.field, v.reason))?;
    Ok(rec)
}

/// serde_json names fields in backticks ("missing field `x`").
fn field_named_in(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn tmp_path(out: &Path) -> std::path::PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "store".into());
    name.push(".partial");
    out.with_file_name(name)
}
