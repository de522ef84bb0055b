//! Output to a file or stdout.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::error::{CliError, CliResult};

pub struct Output {
    name: String,
    inner: Box<dyn Write>,
}

impl Output {
    pub fn open(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => {
                let file = File::create(p).map_err(|e| CliError::write(p.display(), e))?;
                Ok(Self { name: p.display().to_string(), inner: Box::new(BufWriter::new(file)) })
            }
            None => Ok(Self { name: "stdout".into(), inner: Box::new(BufWriter::new(io::stdout())) }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::write(&self.name, e))
    }
}

impl Write for Output {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
