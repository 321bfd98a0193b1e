//! CSV and JSON serialization of report rows.
//!
//! CSV files carry a header row naming every field. JSON files hold an array
//! of flat objects with the same keys. Reals are written in shortest
//! round-trip form, so reading a file back recovers every value exactly.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutputFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(BenchError::Usage(format!(
                "unknown output format '{other}' (csv, json)"
            ))),
        }
    }
}

pub fn write_rows<R: Serialize, W: Write>(
    rows: &[R],
    format: OutputFormat,
    mut out: W,
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_rows<R: DeserializeOwned, In: Read>(format: OutputFormat, input: In) -> Result<Vec<R>> {
    match format {
        OutputFormat::Csv => Ok(csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<_, _>>()?),
        OutputFormat::Json => Ok(serde_json::from_reader(input)?),
    }
}
