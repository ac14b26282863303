use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dla_core::dla::MetricsRecord;

use crate::CliError;

/// Column order of every metrics file.
pub const METRICS_HEADER: [&str; 9] = [
    "step", "total", "cls", "align", "k_reg", "k", "src_acc", "val_acc", "wall_ms",
];

/// Appends one row per step and flushes every `flush_every` rows.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
    flush_every: usize,
    pending: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The fields of one row. `f64` display is locale-free and round-trips.
pub fn format_row(r: &MetricsRecord) -> [String; 9] {
    [
        r.step.to_string(),
        r.total.to_string(),
        r.cls.to_string(),
        r.align.to_string(),
        r.k_reg.to_string(),
        r.k.to_string(),
        r.src_acc.to_string(),
        opt(r.val_acc),
        opt(r.wall_ms),
    ]
}

impl MetricsWriter {
    pub fn create(path: &Path, flush_every: usize) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::runtime(format!("creating {}: {e}", path.display())))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(METRICS_HEADER).map_err(CliError::runtime)?;
        inner.flush().map_err(CliError::runtime)?;
        Ok(MetricsWriter {
            inner,
            flush_every: flush_every.max(1),
            pending: 0,
        })
    }

    pub fn push(&mut self, r: &MetricsRecord) -> Result<(), CliError> {
        self.inner.write_record(format_row(r)).map_err(CliError::runtime)?;
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.pending = 0;
        self.inner.flush().map_err(CliError::runtime)
    }
}

/// One parsed metrics row, as read back for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: f64,
    pub total: f64,
    pub cls: f64,
    pub align: f64,
    pub k_reg: f64,
    pub k: f64,
    pub src_acc: f64,
    pub val_acc: Option<f64>,
    pub wall_ms: Option<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let got: Vec<&str> = header.iter().collect();
    if got != METRICS_HEADER {
        let missing: Vec<&str> = METRICS_HEADER.iter().copied().filter(|c| !got.contains(c)).collect();
        let detail = if missing.is_empty() {
            format!("expected header `{}`", METRICS_HEADER.join(","))
        } else {
            format!("missing columns: {}", missing.join(", "))
        };
        return Err(CliError::Validation(format!("{}: {detail}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Validation(format!("{}:{line}: {e}", path.display())))?;
        let num = |c: usize| -> Result<f64, CliError> {
            rec[c].parse::<f64>().map_err(|_| {
                CliError::Validation(format!(
                    "{}:{line}: column {} is not a number: `{}`",
                    path.display(),
                    METRICS_HEADER[c],
                    &rec[c]
                ))
            })
        };
        let maybe = |c: usize| if rec[c].is_empty() { Ok(None) } else { num(c).map(Some) };
        rows.push(MetricsRow {
            step: num(0)?,
            total: num(1)?,
            cls: num(2)?,
            align: num(3)?,
            k_reg: num(4)?,
            k: num(5)?,
            src_acc: num(6)?,
            val_acc: maybe(7)?,
            wall_ms: maybe(8)?,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}
