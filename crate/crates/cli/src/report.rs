use std::fmt;
use std::path::Path;

use gatt_core::{DType, Error, Result};

/// Line-oriented `key=value` report with an overall verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub command: String,
    pub entries: Vec<(String, String)>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Report { command: command.into(), entries: Vec::new(), pass: true }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses a numeric entry; `inf` is accepted.
    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    /// Writes the report to `dir/<command>.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        let path = dir.join(format!("{}.txt", self.command));
        std::fs::write(&path, self.to_string()).map_err(|e| Error::Io { path, source: e })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "command={}", self.command)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        writeln!(f, "pass={}", self.pass)
    }
}

/// Error of one transformation over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementError {
    pub label: String,
    pub max: f64,
    pub mean: f64,
    /// Pixels dropped from each border before comparing.
    pub crop: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    pub rows: Vec<ElementError>,
    pub dtype: DType,
    pub tolerance: f64,
    pub pass: bool,
}

impl EquivarianceReport {
    pub fn new(rows: Vec<ElementError>, dtype: DType, tolerance: f64) -> Self {
        let pass = rows.iter().all(|r| r.max <= tolerance);
        EquivarianceReport { rows, dtype, tolerance, pass }
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max).fold(0.0, f64::max)
    }

    pub fn to_report(&self, command: &str) -> Report {
        let mut r = Report::new(command);
        r.push("dtype", self.dtype.name());
        r.push("tolerance", format!("{:e}", self.tolerance));
        for row in &self.rows {
            r.push(format!("max_error[{}]", row.label), format!("{:e}", row.max));
            r.push(format!("mean_error[{}]", row.label), format!("{:e}", row.mean));
            r.push(format!("crop[{}]", row.label), row.crop);
        }
        r.push("max_error", format!("{:e}", self.max_error()));
        r.pass = self.pass;
        r
    }
}

/// Accumulates per-label errors across trials.
#[derive(Default)]
pub(crate) struct ErrorTable {
    rows: Vec<(String, usize, f64, f64, usize)>,
}

impl ErrorTable {
    pub(crate) fn add(&mut self, label: &str, crop: usize, diffs: impl Iterator<Item = f64>) {
        let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
        for d in diffs {
            // NaN must fail the comparison rather than vanish in `max`
            max = if d.is_nan() { f64::NAN } else { max.max(d) };
            sum += d;
            n += 1;
        }
        match self.rows.iter_mut().find(|r| r.0 == label) {
            Some(r) => {
                r.2 = if max.is_nan() || r.2.is_nan() { f64::NAN } else { r.2.max(max) };
                r.3 += sum;
                r.4 += n;
            }
            None => self.rows.push((label.to_string(), crop, max, sum, n)),
        }
    }

    pub(crate) fn finish(self) -> Vec<ElementError> {
        self.rows
            .into_iter()
            .map(|(label, crop, max, sum, n)| ElementError {
                label,
                max: if max.is_nan() { f64::INFINITY } else { max },
                mean: sum / n.max(1) as f64,
                crop,
            })
            .collect()
    }
}
