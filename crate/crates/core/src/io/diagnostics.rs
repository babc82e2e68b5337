//! Diagnostics CSV: one row per record, columns in [`DIAGNOSTIC_COLUMNS`] order.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::flow::{DiagnosticsRecord, DIAGNOSTIC_COLUMNS};
use crate::Result;

/// Row-at-a-time writer that flushes after every record.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl DiagnosticsWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(File::create(path)?)
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(DIAGNOSTIC_COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        self.inner.serialize(rec)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_diagnostics(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = DiagnosticsWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if !headers.iter().eq(DIAGNOSTIC_COLUMNS) {
        return Err(crate::Error::Format(format!(
            "{}: unexpected diagnostics columns",
            path.display()
        )));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}
