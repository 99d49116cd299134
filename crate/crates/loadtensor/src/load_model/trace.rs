//! Measured-trace CSV format: header `t,V,theta,P,Q`, one sample per row,
//! `#` starts a comment line. Times must be strictly increasing and the
//! voltage column positive.

use super::{BusMeasurement, ModelError};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const EXPECTED_HEADER: [&str; 5] = ["t", "V", "theta", "P", "Q"];

/// Reads and validates a measurement trace.
pub fn read_trace_csv(path: &Path) -> Result<Vec<BusMeasurement>, ModelError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != EXPECTED_HEADER {
            return Err(ModelError::TraceFormat {
                row: 1,
                reason: format!("header must be `t,V,theta,P,Q`, got `{}`", got.join(",")),
            });
        }
    }
    let mut out = Vec::new();
    for (idx, record) in reader.deserialize::<BusMeasurement>().enumerate() {
        let row = idx + 2; // 1-based, after the header
        let m: BusMeasurement = record.map_err(|e| ModelError::TraceFormat {
            row,
            reason: e.to_string(),
        })?;
        for (name, val) in [("t", m.t), ("V", m.v), ("theta", m.theta), ("P", m.p), ("Q", m.q)] {
            if !val.is_finite() {
                return Err(ModelError::TraceFormat {
                    row,
                    reason: format!("column {name} is not finite"),
                });
            }
        }
        if m.v <= 0.0 {
            return Err(ModelError::TraceFormat {
                row,
                reason: format!("voltage must be positive, got {}", m.v),
            });
        }
        if let Some(prev) = out.last() {
            let prev: &BusMeasurement = prev;
            if m.t <= prev.t {
                return Err(ModelError::TraceFormat {
                    row,
                    reason: format!("time must increase strictly ({} after {})", m.t, prev.t),
                });
            }
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(ModelError::EmptyTrace);
    }
    Ok(out)
}

/// Writes a trace with an optional leading comment block.
pub fn write_trace_csv(
    path: &Path,
    trace: &[BusMeasurement],
    comments: &[String],
) -> Result<(), ModelError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "t,V,theta,P,Q")?;
    for m in trace {
        writeln!(w, "{},{},{},{},{}", m.t, m.v, m.theta, m.p, m.q)?;
    }
    w.flush()?;
    Ok(())
}
