//! CSV emission with a fixed float format.

use std::fs::File;
use std::path::Path;

use crate::error::CliError;

/// 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub struct Table {
    writer: csv::Writer<File>,
    width: usize,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        writer.write_record(header).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            writer,
            width: header.len(),
        })
    }

    pub fn row(&mut self, fields: Vec<String>) -> Result<(), CliError> {
        debug_assert_eq!(fields.len(), self.width);
        self.writer
            .write_record(&fields)
            .map_err(|e| CliError::Runtime(format!("csv write failed: {e}")))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer
            .flush()
            .map_err(|e| CliError::Runtime(format!("csv flush failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(f64::NAN), "NaN");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(opt::<u64>(None), "");
    }
}
