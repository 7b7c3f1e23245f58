//! Line-oriented plain-text serialization used by the model and network
//! files.
//!
//! Reals are written with 17 significant digits (`{:.16e}`), which is enough
//! for every finite `f64` to parse back to the identical bit pattern.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_reals<W: Write>(
    w: &mut W,
    key: &str,
    values: impl IntoIterator<Item = f64>,
) -> std::io::Result<()> {
    write!(w, "{key}")?;
    for v in values {
        write!(w, " {}", fmt_f64(v))?;
    }
    writeln!(w)
}

/// Reads `key value...` records one line at a time, skipping blank lines and
/// `#` comments, and reports parse failures with their line number.
pub(crate) struct RecordReader<R> {
    inner: R,
    path: PathBuf,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        Self {
            inner,
            path: path.to_path_buf(),
            line_no: 0,
            buf: String::new(),
        }
    }

    pub fn error(&self, column: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            column,
            msg: msg.into(),
        }
    }

    /// Next non-comment line, split into its key and the remaining fields.
    pub fn next_record(&mut self) -> Result<Option<(String, Vec<String>)>> {
        loop {
            self.buf.clear();
            let n = self
                .inner
                .read_line(&mut self.buf)
                .map_err(|e| Error::file(&self.path, e))?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace().map(str::to_owned);
            let key = fields.next().unwrap_or_default();
            return Ok(Some((key, fields.collect())));
        }
    }

    pub fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        match self.next_record()? {
            Some((k, fields)) if k == key => Ok(fields),
            Some((k, _)) => Err(self.error(1, format!("expected `{key}`, found `{k}`"))),
            None => Err(self.error(1, format!("unexpected end of file, expected `{key}`"))),
        }
    }

    pub fn expect_one<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let fields = self.expect(key)?;
        if fields.len() != 1 {
            return Err(self.error(2, format!("`{key}` takes exactly one value")));
        }
        self.parse(&fields[0], 2)
    }

    pub fn expect_reals(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let fields = self.expect(key)?;
        if fields.len() != len {
            return Err(self.error(2, format!("`{key}` expects {len} values, found {}", fields.len())));
        }
        fields
            .iter()
            .enumerate()
            .map(|(i, f)| self.parse::<f64>(f, i + 2))
            .collect()
    }

    pub fn parse<T: FromStr>(&self, field: &str, column: usize) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.error(column, format!("cannot parse `{field}`")))
    }
}
